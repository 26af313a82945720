// recording.hpp - session recordings: one "<arrival_s> <message>" per line
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kst {

inline constexpr const char* kRecordingHeader = "# kst-recording v1";

class RecordingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RecordedMessage {
  double arrival = 0.0;  // s, session clock
  std::string text;
};

class RecordingWriter {
 public:
  explicit RecordingWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw RecordingError("cannot write recording '" + path + "'");
    out_ << kRecordingHeader << "\n";
  }

  void append(double arrival, const std::string& text) {
    char t[32];
    std::snprintf(t, sizeof t, "%.9f", arrival);
    out_ << t << ' ' << text << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

/// An empty file is a valid recording with no messages.
inline std::vector<RecordedMessage> parse_recording(std::istream& in, const std::string& name = "recording") {
  std::vector<RecordedMessage> out;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header) {
      if (line.rfind("# kst-recording", 0) != 0)
        throw RecordingError(name + ":1: not a kst recording (missing header)");
      if (line != kRecordingHeader) throw RecordingError(name + ":1: unsupported recording version '" + line + "'");
      header = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    RecordedMessage m;
    try {
      std::size_t used = 0;
      m.arrival = std::stod(line.substr(0, sp), &used);
      if (used != sp) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw RecordingError(name + ":" + std::to_string(lineno) + ": bad arrival timestamp");
    }
    if (sp == std::string::npos) throw RecordingError(name + ":" + std::to_string(lineno) + ": missing message");
    if (!out.empty() && m.arrival < out.back().arrival)
      throw RecordingError(name + ":" + std::to_string(lineno) + ": arrival timestamps go backwards");
    m.text = line.substr(sp + 1);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<RecordedMessage> read_recording(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RecordingError("cannot read recording '" + path + "'");
  return parse_recording(in, path);
}

}  // namespace kst
