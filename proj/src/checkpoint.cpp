#include "bilevel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace bilevel {

namespace {

constexpr char kMagic[] = "BILEV01";
constexpr std::size_t kMagicLen = 7;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  double f64() {
    need(8);
    double d;
    std::memcpy(&d, bytes_.data() + pos_, 8);
    pos_ += 8;
    return d;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ThetaParams& theta) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  const auto& specs = theta.layout.specs();
  put_u32(out, static_cast<std::uint32_t>(specs.size()));
  for (const auto& s : specs) {
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    put_u32(out, static_cast<std::uint32_t>(s.shape.size()));
    for (int d : s.shape) put_u32(out, static_cast<std::uint32_t>(d));
  }
  const std::size_t off = out.size();
  out.resize(off + 8 * static_cast<std::size_t>(theta.flat.size()));
  std::memcpy(out.data() + off, theta.flat.data(), 8 * static_cast<std::size_t>(theta.flat.size()));
  return out;
}

ThetaParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(kMagicLen) != std::string(kMagic, kMagicLen)) throw std::runtime_error("not a BILEV01 checkpoint");
  const std::uint32_t count = r.u32();
  std::vector<TensorSpec> specs;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorSpec s;
    s.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) s.shape.push_back(static_cast<int>(r.u32()));
    specs.push_back(std::move(s));
  }
  ThetaParams theta{ParamLayout(std::move(specs))};
  for (auto& v : theta.flat) v = r.f64();
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return theta;
}

void save_checkpoint(const std::filesystem::path& path, const ThetaParams& theta) {
  const auto bytes = encode_checkpoint(theta);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

ThetaParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ThetaParams load_checkpoint(const std::filesystem::path& path, const ParamLayout& expected) {
  ThetaParams raw = load_checkpoint(path);
  const auto& a = raw.layout.specs();
  const auto& b = expected.specs();
  bool ok = a.size() == b.size();
  for (std::size_t i = 0; ok && i < a.size(); ++i) ok = a[i].name == b[i].name && a[i].shape == b[i].shape;
  if (!ok) throw std::runtime_error(path.string() + ": checkpoint layout does not match the regularizer");
  return ThetaParams(expected, std::move(raw.flat));
}

}  // namespace bilevel
