// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference checks of every backward rule.
 *
 * Each probe builds a random small instance, reduces the operation's output
 * to a scalar with random weights, and compares the analytic gradient of
 * every input element against (f(x + h) - f(x - h)) / 2h. Inputs are drawn
 * away from kinks (ReLU at zero, max-pool ties, integer sample coordinates)
 * so the difference quotient is meaningful.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gdcunet/losses.hpp"
#include "gdcunet/safdconv.hpp"

namespace gdc {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double abs_floor = 1e-5;  // denominator floor; masks absolute errors below tolerance * floor
  int instances = 20;
  std::uint64_t seed = 1;
  bool inject_sign_flip = false;  // mutation smoke test: negates one backward rule per probe
};

struct ProbeReport {
  std::string scope, op;
  double worst = 0;
  int instances = 0;
  std::size_t elements = 0;
  bool passed(double tol) const { return worst <= tol; }
};

/// Relative error with a floor on the denominator.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Identity whose backward rule is deliberately negated.
template <class T>
Var<T> sign_flip_grad(const Var<T>& x) {
  return make_op<T>("sign_flip_grad", x.value(), {x}, [](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
  });
}

using GradFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Worst relative error over every element of every input for one instance.
inline double check_instance(const GradFn& f, std::vector<Var<double>> inputs, Rng& rng,
                             const GradCheckOptions& o, std::size_t* checked = nullptr) {
  const Var<double> out = f(inputs);
  Tensor<double> w(out.shape());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : w.values()) v = u(rng);
  for (auto& in : inputs) in.zero_grad();
  backward(weighted_sum(out, w));

  auto eval = [&] {
    NoGradGuard g;
    return weighted_sum(f(inputs), w).value()[0];
  };
  double worst = 0;
  for (auto& in : inputs) {
    const Tensor<double> analytic = in.grad();
    auto& val = in.mutable_value();
    for (std::size_t k = 0; k < val.size(); ++k) {
      const double orig = val[k];
      val[k] = orig + o.step;
      const double fp = eval();
      val[k] = orig - o.step;
      const double fm = eval();
      val[k] = orig;
      const double numeric = (fp - fm) / (2 * o.step);
      worst = std::max(worst, relative_error(analytic[k], numeric, o.abs_floor));
      if (checked) ++*checked;
    }
  }
  return worst;
}

namespace detail {

struct Draw {
  Rng& rng;
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  std::size_t integer(std::size_t a, std::size_t b) {
    return std::uniform_int_distribution<std::size_t>(a, b)(rng);
  }
  Tensor<double> tensor(Shape s, double lo = -1, double hi = 1) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = uniform(lo, hi);
    return t;
  }
  /// Values with magnitude in [lo, hi] and random sign.
  Tensor<double> away_from_zero(Shape s, double lo, double hi) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = uniform(lo, hi) * (uniform(0, 1) < 0.5 ? -1 : 1);
    return t;
  }
  Var<double> var(Tensor<double> t) { return Var<double>(std::move(t), true); }
};

/// True when every sample coordinate sits at least `margin` away from an
/// integer, or is clamped with at least that margin past the border.
inline bool field_is_smooth(const Tensor<double>& field, double margin) {
  const Shape s = field.shape();
  auto ok = [margin](double pos, std::size_t extent) {
    if (pos < -margin || pos > double(extent - 1) + margin) return true;
    if (pos < margin || pos > double(extent - 1) - margin) return false;
    const double f = pos - std::floor(pos);
    return f >= margin && f <= 1 - margin;
  };
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x)
        if (!ok(double(y) + field(b, y, x, 0), s.h) || !ok(double(x) + field(b, y, x, 1), s.w))
          return false;
  return true;
}

/// Offset network whose field sits near +0.5 px everywhere, so bilinear
/// sampling stays inside cells for finite-difference probing.
inline OffsetNetworkParams<double> smooth_offset_params(const OffsetNetConfig& cfg, Rng& rng) {
  auto p = OffsetNetworkParams<double>::init(cfg, rng);
  for (auto& np : p.parameters()) {
    for (auto& v : np.var.mutable_value().values()) v *= 0.3;
  }
  Draw d{rng};
  for (auto& v : p.unembed.bias.mutable_value().values()) v = d.uniform(0.4, 0.6);
  return p;
}

template <class F>
ProbeReport probe(const std::string& scope, const std::string& op, const GradCheckOptions& o,
                  std::uint64_t salt, F make) {
  ProbeReport r{scope, op};
  Rng rng(o.seed * 1000003ULL + salt);
  for (int i = 0; i < o.instances; ++i) {
    auto [fn, inputs] = make(rng);
    GradFn g = fn;
    if (o.inject_sign_flip) g = [fn](const std::vector<Var<double>>& in) { return sign_flip_grad(fn(in)); };
    r.worst = std::max(r.worst, check_instance(g, std::move(inputs), rng, o, &r.elements));
    ++r.instances;
  }
  return r;
}

using Instance = std::pair<GradFn, std::vector<Var<double>>>;

inline Shape small_shape(Draw& d, std::size_t max_c = 4) {
  return Shape{d.integer(1, 2), d.integer(2, 5), d.integer(2, 5), d.integer(1, max_c)};
}

}  // namespace detail

inline std::vector<std::string> gradcheck_scopes() {
  return {"tensor-core", "warp", "offset", "safdconv", "loss"};
}

/// Runs the probes of one scope (or "all").
inline std::vector<ProbeReport> run_gradcheck(const std::string& scope, const GradCheckOptions& o = {}) {
  using detail::Draw;
  using detail::Instance;
  std::vector<ProbeReport> out;
  const auto scopes = gradcheck_scopes();
  if (scope != "all" && std::find(scopes.begin(), scopes.end(), scope) == scopes.end())
    throw UsageError("unknown gradcheck scope '" + scope + "'");
  auto want = [&](const char* s) { return scope == "all" || scope == s; };

  if (want("tensor-core")) {
    const char* sc = "tensor-core";
    out.push_back(detail::probe(sc, "conv2d", o, 1, [](Rng& rng) -> Instance {
      Draw d{rng};
      const int ks = int(2 * d.integer(0, 2) + 1), ds = int(d.integer(1, 2));
      const Shape s = detail::small_shape(d);
      const std::size_t co = d.integer(1, 3), k = ks;
      GridSpec g(ks, ds);
      return {[g](const std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2], g); },
              {d.var(d.tensor(s)), d.var(d.tensor(Shape{k, k, s.c, co})),
               d.var(d.tensor(Shape{1, 1, 1, co}))}};
    }));
    out.push_back(detail::probe(sc, "softmax", o, 2, [](Rng& rng) -> Instance {
      Draw d{rng};
      return {[](const std::vector<Var<double>>& v) { return softmax_lastdim(v[0]); },
              {d.var(d.tensor(detail::small_shape(d, 6), -3, 3))}};
    }));
    out.push_back(detail::probe(sc, "matmul", o, 3, [](Rng& rng) -> Instance {
      Draw d{rng};
      const std::size_t n = d.integer(1, 5), k = d.integer(1, 5), m = d.integer(1, 5);
      return {[](const std::vector<Var<double>>& v) { return matmul(v[0], v[1]); },
              {d.var(d.tensor(Shape{1, 1, n, k})), d.var(d.tensor(Shape{1, 1, k, m}))}};
    }));
    out.push_back(detail::probe(sc, "linear", o, 4, [](Rng& rng) -> Instance {
      Draw d{rng};
      const Shape s = detail::small_shape(d);
      const std::size_t m = d.integer(1, 4);
      return {[](const std::vector<Var<double>>& v) { return linear(v[0], v[1], v[2]); },
              {d.var(d.tensor(s)), d.var(d.tensor(Shape{1, 1, s.c, m})),
               d.var(d.tensor(Shape{1, 1, 1, m}))}};
    }));
    out.push_back(detail::probe(sc, "relu", o, 5, [](Rng& rng) -> Instance {
      Draw d{rng};
      return {[](const std::vector<Var<double>>& v) { return relu(v[0]); },
              {d.var(d.away_from_zero(detail::small_shape(d), 0.05, 1))}};
    }));
    out.push_back(detail::probe(sc, "gelu", o, 6, [](Rng& rng) -> Instance {
      Draw d{rng};
      return {[](const std::vector<Var<double>>& v) { return gelu(v[0]); },
              {d.var(d.tensor(detail::small_shape(d), -3, 3))}};
    }));
    out.push_back(detail::probe(sc, "mul_add", o, 7, [](Rng& rng) -> Instance {
      Draw d{rng};
      const Shape s = detail::small_shape(d);
      return {[](const std::vector<Var<double>>& v) { return add(mul(v[0], v[1]), v[0]); },
              {d.var(d.tensor(s)), d.var(d.tensor(s))}};
    }));
    out.push_back(detail::probe(sc, "maxpool2", o, 8, [](Rng& rng) -> Instance {
      Draw d{rng};
      const Shape s{d.integer(1, 2), 2 * d.integer(1, 3), 2 * d.integer(1, 3), d.integer(1, 3)};
      // distinct values spaced well beyond the probe step, in random order
      Tensor<double> t(s);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * double(i);
      std::shuffle(t.values().begin(), t.values().end(), rng);
      return {[](const std::vector<Var<double>>& v) { return maxpool2(v[0]); }, {d.var(std::move(t))}};
    }));
    out.push_back(detail::probe(sc, "upsample2", o, 9, [](Rng& rng) -> Instance {
      Draw d{rng};
      return {[](const std::vector<Var<double>>& v) { return upsample_bilinear2(v[0]); },
              {d.var(d.tensor(detail::small_shape(d)))}};
    }));
  }

  if (want("warp")) {
    out.push_back(detail::probe("warp", "warp", o, 20, [](Rng& rng) -> Instance {
      Draw d{rng};
      const Shape s = detail::small_shape(d);
      // integer shift in [-2, 2] plus a fractional part in [0.2, 0.8]: sample
      // points stay inside cells or are clamped with margin past the border
      Tensor<double> field(Shape{s.b, s.h, s.w, 2});
      for (auto& v : field.values()) v = double(d.integer(0, 4)) - 2.0 + d.uniform(0.2, 0.8);
      return {[](const std::vector<Var<double>>& v) { return warp(v[0], v[1]); },
              {d.var(d.tensor(s)), d.var(std::move(field))}};
    }));
  }

  if (want("offset")) {
    out.push_back(detail::probe("offset", "attention", o, 30, [](Rng& rng) -> Instance {
      Draw d{rng};
      const int heads = int(d.integer(1, 3));
      const std::size_t n = d.integer(2, 6), dim = std::size_t(heads) * d.integer(1, 3);
      const Shape s{1, n, 1, dim};
      return {[heads](const std::vector<Var<double>>& v) {
                return multi_head_attention(v[0], v[1], v[2], heads);
              },
              {d.var(d.tensor(s)), d.var(d.tensor(s)), d.var(d.tensor(s))}};
    }));
    out.push_back(detail::probe("offset", "channel_pair_mean", o, 31, [](Rng& rng) -> Instance {
      Draw d{rng};
      Shape s = detail::small_shape(d);
      s.c = 2 * d.integer(1, 3);
      return {[](const std::vector<Var<double>>& v) { return channel_pair_mean(v[0]); },
              {d.var(d.tensor(s))}};
    }));
    out.push_back(detail::probe("offset", "offset_network", o, 32, [](Rng& rng) -> Instance {
      Draw d{rng};
      OffsetNetConfig cfg;
      cfg.channels = int(2 * d.integer(1, 2));
      cfg.embed_multiplier = int(d.integer(1, 2));
      cfg.heads = int(d.integer(1, 2));  // model dim is always even
      cfg.hidden_dim = int(d.integer(2, 6));
      cfg.ff_activation = d.uniform(0, 1) < 0.5;
      const auto p = OffsetNetworkParams<double>::init(cfg, rng);
      Shape s = detail::small_shape(d);
      s.c = std::size_t(cfg.channels);
      std::vector<Var<double>> inputs{d.var(d.tensor(s))};
      for (const auto& np : p.parameters()) inputs.push_back(np.var);
      return {[p, cfg](const std::vector<Var<double>>& v) {
                return compute_displacement_field(v[0], p, cfg);
              },
              inputs};
    }));
  }

  if (want("safdconv")) {
    out.push_back(detail::probe("safdconv", "safdconv", o, 40, [](Rng& rng) -> Instance {
      Draw d{rng};
      SAFDConvConfig cfg;
      cfg.kernel_size = int(2 * d.integer(0, 1) + 1);
      cfg.dilation = int(d.integer(1, 2));
      cfg.in_channels = int(2 * d.integer(1, 2));
      cfg.out_channels = int(d.integer(1, 3));
      cfg.embed_multiplier = int(d.integer(1, 2));
      cfg.heads = 2;
      cfg.hidden_dim = int(d.integer(2, 6));
      cfg.ff_activation = d.uniform(0, 1) < 0.5;
      const Shape s{d.integer(1, 2), d.integer(3, 5), d.integer(3, 5), std::size_t(cfg.in_channels)};
      for (;;) {
        SAFDConvLayer<double> layer{cfg, detail::smooth_offset_params(cfg.offset_config(), rng), {}};
        layer.kernel = init_conv_kernel<double>(cfg.kernel_size, cfg.in_channels, cfg.out_channels, rng);
        Var<double> x = d.var(d.tensor(s));
        Tensor<double> field;
        {
          NoGradGuard g;
          field = compute_displacement_field(x, layer.offset, cfg.offset_config()).value();
        }
        if (!detail::field_is_smooth(field, 0.1)) continue;
        std::vector<Var<double>> inputs{x};
        for (const auto& np : layer.parameters()) inputs.push_back(np.var);
        return {[layer](const std::vector<Var<double>>& v) { return safdconv_forward(v[0], layer); },
                inputs};
      }
    }));
  }

  if (want("loss")) {
    out.push_back(detail::probe("loss", "bce_dice_loss", o, 50, [](Rng& rng) -> Instance {
      Draw d{rng};
      const Shape s{d.integer(1, 3), d.integer(2, 5), d.integer(2, 5), 1};
      Tensor<double> targets(s);
      for (auto& v : targets.values()) v = d.uniform(0, 1) < 0.4 ? 1.0 : 0.0;
      LossConfig cfg;
      cfg.bce_weight = d.uniform(0, 1);
      return {[targets, cfg](const std::vector<Var<double>>& v) { return bce_dice_loss(v[0], targets, cfg); },
              {d.var(d.tensor(s, -3, 3))}};
    }));
  }
  return out;
}

}  // namespace gdc
