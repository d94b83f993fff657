#pragma once

// Benchmark-layout sequences: <dir>/img/NNNNNN.png frames,
// <dir>/groundtruth_rect.txt with one "x,y,w,h" per frame, optional att.txt
// (sequence tags) and frame_tags.txt (per-frame tags).

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "prl/bbox.hpp"
#include "prl/tensor.hpp"

namespace prl {

/// Content that is readable but violates the format or a consistency rule.
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Sequence {
  std::string name;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> frames;
  std::vector<BBox> gt;
  std::set<std::string> attributes;
  std::vector<std::set<std::string>> frame_tags;  // empty or one entry per frame

  std::size_t size() const { return frames.size(); }
};

/// Order of the 0/1 flags in UAV123-style att.txt files.
const std::vector<std::string>& uav_attribute_order();

/// "x,y,w,h", comma- or tab-separated. Throws DataError naming `where`.
BBox parse_box(const std::string& line, const std::string& where);

/// Throws IoError when unreadable, DataError with the line number when malformed.
std::vector<BBox> read_boxes(const std::filesystem::path& path);
/// One "x,y,w,h" line per box, shortest round-trip decimal form.
void write_boxes(const std::filesystem::path& path, const std::vector<BBox>& boxes);

Sequence load_sequence(const std::filesystem::path& dir);

/// Every subdirectory holding a groundtruth_rect.txt, sorted by name.
std::vector<Sequence> load_dataset(const std::filesystem::path& root);

}  // namespace prl
