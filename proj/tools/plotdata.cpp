/* Copyright 2026 The StructAttn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "plotdata.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <vector>

#include "structattn/tensor.hpp"

namespace structattn::cli {
namespace {

namespace fs = std::filesystem;

struct Run {
  std::string series;
  std::uint64_t seed = 0;
  std::vector<std::string> xs, ys;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& file) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError(file.string() + ": missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

Run read_run(const fs::path& file, const std::string& x, const std::string& y) {
  Run run;
  static const std::regex named(R"((.*)-seed(\d+))");
  const std::string dir = file.parent_path().filename().string();
  std::smatch m;
  if (std::regex_match(dir, m, named)) {
    run.series = m[1];
    run.seed = std::stoull(m[2]);
  } else {
    run.series = dir;
  }
  std::ifstream in(file);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(file.string() + ": empty metrics file");
  const auto header = split_csv(line);
  const auto xi = column(header, x, file);
  const auto yi = column(header, y, file);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw ValidationError(file.string() + ": ragged row '" + line + "'");
    run.xs.push_back(cells[xi]);
    run.ys.push_back(cells[yi]);
  }
  return run;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string export_plotdata(const fs::path& root, const std::string& x, const std::string& y) {
  if (x != "step" && x != "flops_cumulative") throw ValidationError("--x must be step or flops_cumulative");
  if (y != "loss" && y != "eval_error") throw ValidationError("--y must be loss or eval_error");
  if (!fs::is_directory(root)) throw ValidationError(root.string() + ": not a directory");

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
  }
  if (files.empty()) throw ValidationError(root.string() + ": no metrics found");
  std::sort(files.begin(), files.end());

  std::map<std::string, std::map<std::uint64_t, Run>> series;
  for (const auto& f : files) {
    Run run = read_run(f, x, y);
    series[run.series][run.seed] = std::move(run);
  }

  std::string out = "x,y,series,seed,median\n";
  char buf[64];
  for (const auto& [name, runs] : series) {
    std::vector<std::string> medians;
    for (std::size_t i = 0;; ++i) {
      std::vector<double> ys;
      for (const auto& [seed, run] : runs) {
        if (i < run.ys.size()) ys.push_back(std::stod(run.ys[i]));
      }
      if (ys.empty()) break;
      std::snprintf(buf, sizeof buf, "%.17g", median(ys));
      medians.emplace_back(buf);
    }
    for (const auto& [seed, run] : runs) {
      for (std::size_t i = 0; i < run.xs.size(); ++i) {
        out += run.xs[i] + "," + run.ys[i] + "," + name + "," + std::to_string(seed) + "," + medians[i] + "\n";
      }
    }
  }
  return out;
}

}  // namespace structattn::cli
