#include "prl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace prl {
namespace fs = std::filesystem;

const std::vector<std::string>& uav_attribute_order() {
  static const std::vector<std::string> order{"SV", "ARC", "LR", "FM", "FOC", "POC",
                                              "OV", "BC",  "IV", "VC", "CM",  "SOB"};
  return order;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == '\t' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

std::set<std::string> parse_tags(const std::string& line) {
  const auto fields = split_fields(line);
  const auto& order = uav_attribute_order();
  const bool flags = fields.size() == order.size() &&
                     std::all_of(fields.begin(), fields.end(), [](const std::string& f) {
                       return f == "0" || f == "1";
                     });
  std::set<std::string> tags;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (!flags) {
      tags.insert(fields[i]);
    } else if (fields[i] == "1") {
      tags.insert(order[i]);
    }
  }
  return tags;
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

BBox parse_box(const std::string& line, const std::string& where) {
  const auto fields = split_fields(trim(line));
  if (fields.size() != 4) {
    throw DataError(where + ": expected 4 values x,y,w,h, got " + std::to_string(fields.size()));
  }
  double v[4];
  for (int i = 0; i < 4; ++i) {
    const std::string& f = fields[static_cast<std::size_t>(i)];
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v[i]);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw DataError(where + ": cannot parse '" + f + "' as a number");
    }
  }
  const BBox b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw DataError(where + ": box extents must be positive");
  return b;
}

std::vector<BBox> read_boxes(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<BBox> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out.push_back(parse_box(lines[i], path.string() + " line " + std::to_string(i + 1)));
  }
  return out;
}

void write_boxes(const fs::path& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[64];
  for (const BBox& b : boxes) {
    const double v[4] = {b.x, b.y, b.w, b.h};
    for (int i = 0; i < 4; ++i) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v[i]);
      out.write(buf, res.ptr - buf);
      out.put(i == 3 ? '\n' : ',');
    }
  }
  if (!out) throw IoError("cannot write " + path.string());
}

Sequence load_sequence(const fs::path& dir) {
  Sequence seq;
  seq.dir = dir;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  const fs::path img = dir / "img";
  std::error_code ec;
  if (!fs::is_directory(img, ec)) throw IoError(seq.name + ": missing frame directory " + img.string());
  for (const auto& e : fs::directory_iterator(img)) {
    if (e.is_regular_file() && is_image(e.path())) seq.frames.push_back(e.path());
  }
  std::sort(seq.frames.begin(), seq.frames.end());
  seq.gt = read_boxes(dir / "groundtruth_rect.txt");
  if (seq.frames.size() != seq.gt.size()) {
    throw DataError(seq.name + ": frames=" + std::to_string(seq.frames.size()) +
                    " gt=" + std::to_string(seq.gt.size()));
  }
  if (seq.frames.empty()) throw DataError(seq.name + ": no frames");
  if (fs::exists(dir / "att.txt")) {
    for (const auto& line : read_lines(dir / "att.txt")) {
      for (const auto& t : parse_tags(line)) seq.attributes.insert(t);
    }
  }
  if (fs::exists(dir / "frame_tags.txt")) {
    auto lines = read_lines(dir / "frame_tags.txt");
    if (lines.size() > seq.size()) {
      throw DataError(seq.name + ": frame_tags.txt has " + std::to_string(lines.size()) +
                      " lines for " + std::to_string(seq.size()) + " frames");
    }
    lines.resize(seq.size());
    for (const auto& line : lines) seq.frame_tags.push_back(parse_tags(line));
  }
  return seq;
}

std::vector<Sequence> load_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "groundtruth_rect.txt")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

}  // namespace prl
