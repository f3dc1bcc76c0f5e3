#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "bilevel/problems.hpp"

namespace bilevel {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  return buf.substr(start, pos - start);
}

int header_int(const std::string& buf, std::size_t& pos, const char* what, const std::string& file) {
  const std::string tok = header_token(buf, pos);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    throw std::runtime_error(file + ": malformed PGM header (" + what + ")");
  }
  return std::stoi(tok);
}

}  // namespace

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string file = path.string();
  std::size_t pos = 0;
  if (header_token(buf, pos) != "P5") throw std::runtime_error(file + ": not a binary PGM (magic P5)");
  const int w = header_int(buf, pos, "width", file);
  const int h = header_int(buf, pos, "height", file);
  const int maxval = header_int(buf, pos, "maxval", file);
  if (w < 1 || h < 1) throw std::runtime_error(file + ": bad PGM dimensions");
  if (maxval < 1 || maxval > 65535) throw std::runtime_error(file + ": PGM maxval out of range");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw std::runtime_error(file + ": malformed PGM header");
  }
  ++pos;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (buf.size() - pos < n * bps) throw std::runtime_error(file + ": truncated PGM payload");
  Image img{{1, h, w}, Vec(static_cast<Eigen::Index>(n))};
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bps == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > static_cast<unsigned>(maxval)) throw std::runtime_error(file + ": sample exceeds maxval");
    img.data[static_cast<Eigen::Index>(i)] = static_cast<double>(v) / maxval;
  }
  return img;
}

void save_pgm(const std::filesystem::path& path, const Image& img, int maxval) {
  if (img.shape.channels != 1) throw std::invalid_argument("save_pgm: grayscale images only");
  if (maxval < 1 || maxval > 65535) throw std::invalid_argument("save_pgm: maxval out of range");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n" << img.shape.width << " " << img.shape.height << "\n" << maxval << "\n";
  std::string payload;
  for (double v : img.data) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval < 256) {
      payload.push_back(static_cast<char>(q));
    } else {
      payload.push_back(static_cast<char>(q >> 8));
      payload.push_back(static_cast<char>(q & 0xff));
    }
  }
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace bilevel
