#pragma once

// JSON-lines form of a DecodeTrace, one step per line:
//   {"kl":0.12,"per_image_kl":[...],"step":0,"support_size":3,"text":"a","token":2}
// Keys are sorted; an infinite KL is written as null.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "convis/convis.hpp"

namespace convis {

struct TraceLine {
  std::size_t step = 0;
  TokenId token = 0;
  std::string text;
  double kl = 0.0;
  std::size_t support_size = 0;
  std::vector<double> per_image_kl;

  friend bool operator==(const TraceLine&, const TraceLine&) = default;
};

std::vector<TraceLine> trace_lines(const DecodeTrace& trace, const std::function<std::string(TokenId)>& text_of);
std::vector<TraceLine> trace_lines(const DecodeTrace& trace, const Vocabulary& vocab);

void write_trace_jsonl(std::ostream& os, const std::vector<TraceLine>& lines);
void write_trace_jsonl(const std::string& path, const std::vector<TraceLine>& lines);

/// Parses and validates a trace file; malformed lines raise invalid_argument
/// naming the line number.
std::vector<TraceLine> read_trace_jsonl(std::istream& is);
std::vector<TraceLine> read_trace_jsonl(const std::string& path);

}  // namespace convis
