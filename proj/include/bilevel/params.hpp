#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "bilevel/types.hpp"

namespace bilevel {

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  bool nonneg = false;  // entries are clamped to >= 0 after every update

  std::size_t size() const;
  bool operator==(const TensorSpec&) const = default;
};

/// Ordered description of the learnable tensors packed into a flat vector.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<TensorSpec> specs);

  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::size_t size() const { return total_; }
  std::size_t offset(const std::string& name) const;
  const TensorSpec& spec(const std::string& name) const;
  bool contains(const std::string& name) const;

  bool operator==(const ParamLayout& o) const { return specs_ == o.specs_; }

 private:
  std::vector<TensorSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

struct ThetaParams {
  ParamLayout layout;
  Vec flat;

  ThetaParams() = default;
  explicit ThetaParams(ParamLayout l);
  ThetaParams(ParamLayout l, Vec values);

  Eigen::Map<Vec> block(const std::string& name);
  Eigen::Map<const Vec> block(const std::string& name) const;
};

using TensorMap = std::map<std::string, Vec>;

TensorMap unpack(const ThetaParams& theta);
ThetaParams pack(const ParamLayout& layout, const TensorMap& tensors);

/// Sets negative entries of every nonneg-flagged tensor to zero.
ThetaParams clamp_nonneg(const ThetaParams& theta);

}  // namespace bilevel
