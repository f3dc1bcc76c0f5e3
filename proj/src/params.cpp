#include "bilevel/params.hpp"

#include <stdexcept>

namespace bilevel {

std::size_t TensorSpec::size() const {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor '" + name + "' has a negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

ParamLayout::ParamLayout(std::vector<TensorSpec> specs) : specs_(std::move(specs)) {
  offsets_.reserve(specs_.size());
  for (const auto& s : specs_) {
    for (std::size_t j = 0; j < offsets_.size(); ++j) {
      if (specs_[j].name == s.name) throw std::invalid_argument("duplicate tensor '" + s.name + "'");
    }
    offsets_.push_back(total_);
    total_ += s.size();
  }
}

std::size_t ParamLayout::offset(const std::string& name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return offsets_[i];
  }
  throw std::out_of_range("no tensor named '" + name + "'");
}

const TensorSpec& ParamLayout::spec(const std::string& name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no tensor named '" + name + "'");
}

bool ParamLayout::contains(const std::string& name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return true;
  }
  return false;
}

ThetaParams::ThetaParams(ParamLayout l) : layout(std::move(l)), flat(Vec::Zero(layout.size())) {}

ThetaParams::ThetaParams(ParamLayout l, Vec values) : layout(std::move(l)), flat(std::move(values)) {
  if (static_cast<std::size_t>(flat.size()) != layout.size()) {
    throw std::invalid_argument("parameter vector length " + std::to_string(flat.size()) +
                                " does not match layout size " + std::to_string(layout.size()));
  }
}

Eigen::Map<Vec> ThetaParams::block(const std::string& name) {
  const auto off = layout.offset(name);
  return {flat.data() + off, static_cast<Eigen::Index>(layout.spec(name).size())};
}

Eigen::Map<const Vec> ThetaParams::block(const std::string& name) const {
  const auto off = layout.offset(name);
  return {flat.data() + off, static_cast<Eigen::Index>(layout.spec(name).size())};
}

TensorMap unpack(const ThetaParams& theta) {
  TensorMap out;
  for (const auto& s : theta.layout.specs()) out.emplace(s.name, Vec(theta.block(s.name)));
  return out;
}

ThetaParams pack(const ParamLayout& layout, const TensorMap& tensors) {
  ThetaParams theta(layout);
  for (const auto& s : layout.specs()) {
    auto it = tensors.find(s.name);
    if (it == tensors.end()) throw std::invalid_argument("pack: missing tensor '" + s.name + "'");
    if (static_cast<std::size_t>(it->second.size()) != s.size()) {
      throw std::invalid_argument("pack: tensor '" + s.name + "' has wrong size");
    }
    theta.block(s.name) = it->second;
  }
  if (tensors.size() != layout.specs().size()) {
    throw std::invalid_argument("pack: unexpected extra tensors");
  }
  return theta;
}

ThetaParams clamp_nonneg(const ThetaParams& theta) {
  ThetaParams out = theta;
  for (const auto& s : out.layout.specs()) {
    if (!s.nonneg) continue;
    auto b = out.block(s.name);
    b = b.cwiseMax(0.0);
  }
  return out;
}

}  // namespace bilevel
