#include "support/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dget::testing {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixture_text(const std::string& file) {
  return read_file(std::string(DGET_FIXTURE_DIR) + "/" + file);
}

namespace {

std::vector<InputSpec> parse_inputs(const std::string& text) {
  std::vector<InputSpec> out;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::string hash, kw;
    words >> hash >> kw;
    if (hash != "#" || kw != "input") continue;
    InputSpec spec;
    words >> spec.name >> spec.lo >> spec.hi;
    if (!words || spec.lo > spec.hi) throw std::runtime_error("bad input header: " + line);
    out.push_back(spec);
  }
  return out;
}

}  // namespace

const std::vector<CorpusEntry>& corpus() {
  static const std::vector<CorpusEntry> entries = [] {
    std::vector<CorpusEntry> out;
    for (const auto& f : std::filesystem::directory_iterator(DGET_CORPUS_DIR)) {
      if (f.path().extension() != ".ghost") continue;
      CorpusEntry e;
      e.name = f.path().stem().string();
      e.text = read_file(f.path().string());
      e.inputs = parse_inputs(e.text);
      out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return out;
  }();
  return entries;
}

Globals random_inputs(const CorpusEntry& entry, std::mt19937_64& rng) {
  Globals g;
  for (const auto& in : entry.inputs) {
    std::uniform_int_distribution<std::int64_t> d(in.lo, in.hi);
    g[in.name] = d(rng);
  }
  return g;
}

Globals boundary_inputs(const CorpusEntry& entry, bool low) {
  Globals g;
  for (const auto& in : entry.inputs) g[in.name] = low ? in.lo : in.hi;
  return g;
}

std::string with_boot(const std::string& text, const Globals& inputs) {
  std::string out = text + "\n.method " + kBootMethod + " 0 0\n";
  for (const auto& [name, v] : inputs) out += "  CONST " + ir::to_literal(v) + "\n  GSET " + name + "\n";
  out += "  CALL main 0\n  RET\n.end\n";
  return out;
}

}  // namespace dget::testing
