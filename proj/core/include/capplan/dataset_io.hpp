#pragma once

// Line-delimited dataset files.
//
// Line 1 is a header object {"format":"capplan-dataset","version":1,
// "split_seed":S}. Every following line is one window:
//   {"split":"train|val|test","video_id":..,"task_id":..,"horizon":T,
//    "actions":[..],"start_state":..,"goal_state":..,
//    "start_obs":[..],"goal_obs":[..],
//    "start_caption_emb":[..],"goal_caption_emb":[..]}
// Reals are written with 17 significant digits so reading reproduces every
// double exactly. task_id/start_state/goal_state may be null.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "capplan/world.hpp"

namespace capplan::io {

void write_dataset(const world::DatasetSplit& split, std::ostream& out);
void write_dataset(const world::DatasetSplit& split,
                   const std::filesystem::path& path);

world::DatasetSplit read_dataset(std::istream& in);
world::DatasetSplit read_dataset(const std::filesystem::path& path);

// Formats a double with 17 significant digits (round-trip exact).
std::string format_real(double value);

}  // namespace capplan::io
