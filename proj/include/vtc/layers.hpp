#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"
#include "vtc/vtf.hpp"

namespace vtc {

/// Weight tensor of shape {in, out}, every element drawn from the stream
/// `root.fork(name)` as U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline Tensor init_uniform(const SplitMix64& root, const std::string& name, Shape shape, std::size_t fan_in) {
  SplitMix64 rng = root.fork(name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

/// y = x W (+ b). W is {in, out}; b is {1, out} or absent.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(const SplitMix64& root, const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
    Linear l;
    l.weight = init_uniform(root, name + ".weight", {in, out}, in);
    if (with_bias) l.bias = init_uniform(root, name + ".bias", {1, out}, in);
    return l;
  }

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
  bool has_bias() const { return !bias.empty(); }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return has_bias() ? add_row(y, bias) : y;
  }

  void export_to(std::vector<vtf::NamedTensor>& out, const std::string& name) const {
    out.push_back({name + ".weight", weight});
    if (has_bias()) out.push_back({name + ".bias", bias});
  }

  void import_from(const std::vector<vtf::NamedTensor>& set, const std::string& name) {
    const Tensor& w = vtf::find(set, name + ".weight");
    if (w.shape() != weight.shape()) throw FormatError(name + ".weight: shape " + shape_str(w.shape()) + " expected " + shape_str(weight.shape()));
    weight = w;
    if (has_bias()) bias = vtf::find(set, name + ".bias");
  }
};

/// One affine layer, or two with gelu between (hidden width = output width).
struct Mlp {
  Linear fc1;
  std::optional<Linear> fc2;

  static Mlp init(const SplitMix64& root, const std::string& name, std::size_t in, std::size_t out, int depth,
                  bool with_bias) {
    Mlp m;
    m.fc1 = Linear::init(root, name + ".fc1", in, out, with_bias);
    if (depth == 2) m.fc2 = Linear::init(root, name + ".fc2", out, out, with_bias);
    return m;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = fc1(x);
    return fc2 ? (*fc2)(gelu(h)) : h;
  }

  void export_to(std::vector<vtf::NamedTensor>& out, const std::string& name) const {
    fc1.export_to(out, name + ".fc1");
    if (fc2) fc2->export_to(out, name + ".fc2");
  }

  void import_from(const std::vector<vtf::NamedTensor>& set, const std::string& name) {
    fc1.import_from(set, name + ".fc1");
    if (fc2) fc2->import_from(set, name + ".fc2");
  }
};

}  // namespace vtc
