#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>

#include "lanistr/layers.hpp"
#include "lanistr/objectives.hpp"
#include "oracles.hpp"

namespace lanistr::testing {

namespace {

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

using Unary = Tensor (*)(const Tensor&);

// Elementwise op checked on inputs away from its kinks and poles.
GradientCase unary(std::string name, Unary op, double lo, double hi, bool signed_inputs) {
  return {std::move(name), [=](std::mt19937_64& rng) {
            const Shape s = {draw(rng, 1, 4), draw(rng, 1, 5)};
            Tensor x = signed_inputs ? signed_tensor(s, rng, lo, hi) : uniform_tensor(s, rng, lo, hi);
            const std::uint64_t w = rng();
            return gradient_error([=](const auto& in) { return weighted_sum(op(in[0]), w); }, {x});
          }};
}

using Binary = Tensor (*)(const Tensor&, const Tensor&);

GradientCase binary(std::string name, Binary op, bool broadcast, bool positive_rhs) {
  return {std::move(name), [=](std::mt19937_64& rng) {
            const Shape s = {draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 1, 4)};
            const Shape sb = broadcast ? Shape(s.begin() + static_cast<long>(draw(rng, 1, 2)), s.end()) : s;
            Tensor a = uniform_tensor(s, rng);
            Tensor b = positive_rhs ? signed_tensor(sb, rng, 0.5, 2.0) : uniform_tensor(sb, rng);
            const std::uint64_t w = rng();
            return gradient_error([=](const auto& in) { return weighted_sum(op(in[0], in[1]), w); }, {a, b});
          }};
}

// Random descriptors for `rows` rows over `positions` candidates, at least one
// masked position overall.
std::vector<MaskDescriptor> random_descriptors(std::mt19937_64& rng, Modality m, std::size_t rows,
                                               std::size_t positions, std::size_t per_position,
                                               const std::function<double()>& original) {
  std::vector<MaskDescriptor> d(rows);
  std::bernoulli_distribution pick(0.4);
  std::size_t total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    d[r].modality = m;
    d[r].values_per_position = per_position;
    for (std::size_t p = 0; p < positions; ++p) {
      if (!pick(rng) && !(r + 1 == rows && p + 1 == positions && total == 0)) continue;
      d[r].positions.push_back(p);
      for (std::size_t k = 0; k < per_position; ++k) d[r].originals.push_back(original());
      ++total;
    }
  }
  return d;
}

std::vector<const MaskDescriptor*> pointers(const std::vector<MaskDescriptor>& d) {
  std::vector<const MaskDescriptor*> out;
  for (const auto& x : d) out.push_back(&x);
  return out;
}

std::vector<GradientCase> build() {
  std::vector<GradientCase> c;
  c.push_back(binary("add", add, false, false));
  c.push_back(binary("add_broadcast", add, true, false));
  c.push_back(binary("sub", sub, false, false));
  c.push_back(binary("sub_broadcast", sub, true, false));
  c.push_back(binary("mul", mul, false, false));
  c.push_back(binary("mul_broadcast", mul, true, false));
  c.push_back(binary("div", div, false, true));
  c.push_back(binary("div_broadcast", div, true, true));
  c.push_back(unary("neg", neg, -1.0, 1.0, false));
  c.push_back(unary("sqrt", sqrt, 0.5, 2.0, false));
  c.push_back(unary("exp", exp, -1.0, 1.0, false));
  c.push_back(unary("log", log, 0.5, 2.0, false));
  c.push_back(unary("abs", abs, 0.05, 1.0, true));
  c.push_back(unary("square", square, -1.0, 1.0, false));
  c.push_back(unary("relu", relu, 0.05, 1.0, true));
  c.push_back(unary("gelu", gelu, -3.0, 3.0, false));
  c.push_back(unary("sigmoid", sigmoid, -3.0, 3.0, false));
  c.push_back(unary("transpose", transpose, -1.0, 1.0, false));
  c.push_back(unary("sum", sum, -1.0, 1.0, false));
  c.push_back(unary("mean", mean, -1.0, 1.0, false));

  c.push_back({"add_scalar", [](std::mt19937_64& rng) {
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
                 const double k = uniform_tensor({1}, rng).item();
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(add_scalar(in[0], k), w); }, {x});
               }});
  c.push_back({"scale", [](std::mt19937_64& rng) {
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
                 const double k = uniform_tensor({1}, rng, -3.0, 3.0).item();
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(scale(in[0], k), w); }, {x});
               }});
  c.push_back({"glu", [](std::mt19937_64& rng) {
                 Tensor x = uniform_tensor({draw(rng, 1, 4), 2 * draw(rng, 1, 4)}, rng, -2.0, 2.0);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(glu(in[0]), w); }, {x});
               }});
  c.push_back({"matmul_shared", [](std::mt19937_64& rng) {
                 const std::size_t b = draw(rng, 1, 3), n = draw(rng, 1, 4), k = draw(rng, 1, 4), m = draw(rng, 1, 4);
                 Tensor a = uniform_tensor({b, n, k}, rng), w2 = uniform_tensor({k, m}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(matmul(in[0], in[1]), w); }, {a, w2});
               }});
  c.push_back({"matmul_batched", [](std::mt19937_64& rng) {
                 const std::size_t b = draw(rng, 1, 3), n = draw(rng, 1, 4), k = draw(rng, 1, 4), m = draw(rng, 1, 4);
                 Tensor a = uniform_tensor({b, n, k}, rng), w2 = uniform_tensor({b, k, m}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(matmul(in[0], in[1]), w); }, {a, w2});
               }});
  c.push_back({"reshape", [](std::mt19937_64& rng) {
                 const std::size_t a = draw(rng, 1, 4), b = draw(rng, 1, 4);
                 Tensor x = uniform_tensor({a, b, 2}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(reshape(in[0], {2 * b, a}), w); },
                                       {x});
               }});
  c.push_back({"concat", [](std::mt19937_64& rng) {
                 const std::size_t axis = draw(rng, 0, 2);
                 Shape s1 = {draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)}, s2 = s1;
                 s2[axis] = draw(rng, 1, 3);
                 Tensor a = uniform_tensor(s1, rng), b = uniform_tensor(s2, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(concat({in[0], in[1]}, axis), w); },
                                       {a, b});
               }});
  c.push_back({"slice", [](std::mt19937_64& rng) {
                 const std::size_t axis = draw(rng, 0, 2);
                 Shape s = {draw(rng, 1, 4), draw(rng, 1, 4), draw(rng, 1, 4)};
                 const std::size_t start = draw(rng, 0, s[axis] - 1), len = draw(rng, 1, s[axis] - start);
                 Tensor x = uniform_tensor(s, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(slice(in[0], axis, start, len), w); },
                                       {x});
               }});
  c.push_back({"sum_axis", [](std::mt19937_64& rng) {
                 const std::size_t axis = draw(rng, 0, 2);
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(sum_axis(in[0], axis), w); }, {x});
               }});
  c.push_back({"softmax", [](std::mt19937_64& rng) {
                 const std::size_t axis = draw(rng, 0, 2);
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 1, 4), draw(rng, 1, 4)}, rng, -2.0, 2.0);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(softmax(in[0], axis), w); }, {x});
               }});
  c.push_back({"sparsemax", [](std::mt19937_64& rng) {
                 // Redraw rows whose entries sit within 1e-3 of the threshold,
                 // where the support would change under perturbation.
                 const std::size_t rows = draw(rng, 1, 4), cols = draw(rng, 2, 8);
                 std::vector<double> v;
                 for (std::size_t r = 0; r < rows; ++r) {
                   for (;;) {
                     Tensor row = uniform_tensor({cols}, rng, -1.5, 1.5);
                     const double tau = sparsemax_threshold(row.data());
                     const bool clear = std::all_of(row.data().begin(), row.data().end(),
                                                    [&](double z) { return std::abs(z - tau) > 1e-3; });
                     if (!clear) continue;
                     v.insert(v.end(), row.data().begin(), row.data().end());
                     break;
                   }
                 }
                 Tensor x({rows, cols}, v);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(sparsemax(in[0]), w); }, {x});
               }});
  c.push_back({"layer_norm", [](std::mt19937_64& rng) {
                 const std::size_t d = draw(rng, 2, 6);
                 Tensor x = uniform_tensor({draw(rng, 1, 3), draw(rng, 1, 3), d}, rng, -2.0, 2.0);
                 Tensor g = uniform_tensor({d}, rng, 0.5, 1.5), b = uniform_tensor({d}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error(
                     [=](const auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), w); }, {x, g, b});
               }});
  c.push_back({"cosine_similarity", [](std::mt19937_64& rng) {
                 const Shape s = {draw(rng, 1, 4), draw(rng, 2, 6)};
                 Tensor a = uniform_tensor(s, rng), b = uniform_tensor(s, rng);
                 const std::uint64_t w = rng();
                 return gradient_error(
                     [=](const auto& in) { return weighted_sum(cosine_similarity(in[0], in[1]), w); }, {a, b});
               }});
  c.push_back({"stop_gradient", [](std::mt19937_64& rng) {
                 // d/dx [sg(x) * x] against differences taken on the live path
                 // only, with the stopped copy held at its value.
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
                 const std::uint64_t w = rng();
                 const auto analytic =
                     analytic_gradients([=](const auto& in) { return weighted_sum(mul(stop_gradient(in[0]), in[0]), w); },
                                        {x});
                 const Tensor held = x.detach();
                 const auto numeric =
                     numeric_gradient([=](const auto& in) { return weighted_sum(mul(held, in[0]), w); }, {x}, 0);
                 return relative_error(analytic[0], numeric);
               }});
  c.push_back({"embedding", [](std::mt19937_64& rng) {
                 const std::size_t vocab = draw(rng, 2, 6), d = draw(rng, 1, 4), n = draw(rng, 1, 3), l = draw(rng, 1, 4);
                 std::vector<int> ids(n * l);
                 for (int& id : ids) id = static_cast<int>(draw(rng, 0, vocab - 1));
                 Tensor table = uniform_tensor({vocab, d}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(embedding(in[0], ids, {n, l}), w); },
                                       {table});
               }});
  c.push_back({"take_rows", [](std::mt19937_64& rng) {
                 const std::size_t rows = draw(rng, 1, 4);
                 std::vector<std::size_t> pick(draw(rng, 1, 6));
                 for (auto& r : pick) r = draw(rng, 0, rows - 1);
                 Tensor x = uniform_tensor({rows, draw(rng, 1, 3), 2}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(take_rows(in[0], pick), w); }, {x});
               }});
  c.push_back({"masked_select", [](std::mt19937_64& rng) {
                 const std::size_t a = draw(rng, 1, 3), b = draw(rng, 1, 4);
                 std::vector<bool> mask(a * b);
                 std::bernoulli_distribution p(0.5);
                 for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = p(rng);
                 mask[draw(rng, 0, mask.size() - 1)] = true;
                 Tensor x = uniform_tensor({a, b, draw(rng, 1, 3)}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error([=](const auto& in) { return weighted_sum(masked_select(in[0], mask), w); },
                                       {x});
               }});
  c.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                 const std::size_t m = draw(rng, 1, 5), v = draw(rng, 2, 6);
                 std::vector<int> targets(m);
                 for (int& t : targets) t = static_cast<int>(draw(rng, 0, v - 1));
                 Tensor logits = uniform_tensor({m, v}, rng, -2.0, 2.0);
                 return gradient_error([=](const auto& in) { return cross_entropy(in[0], targets); }, {logits});
               }});
  c.push_back({"dropout", [](std::mt19937_64& rng) {
                 Tensor x = uniform_tensor({draw(rng, 1, 4), draw(rng, 2, 6)}, rng);
                 const std::uint64_t s = rng(), w = rng();
                 return gradient_error(
                     [=](const auto& in) {
                       std::mt19937_64 mask_rng(s);
                       return weighted_sum(dropout(in[0], 0.3, mask_rng), w);
                     },
                     {x});
               }});
  c.push_back({"multi_head_attention", [](std::mt19937_64& rng) {
                 const std::size_t heads = draw(rng, 1, 2), d = heads * draw(rng, 1, 3);
                 const Shape s = {draw(rng, 1, 2), draw(rng, 1, 4), d};
                 Tensor q = uniform_tensor(s, rng), k = uniform_tensor(s, rng), v = uniform_tensor(s, rng);
                 const std::uint64_t w = rng();
                 return gradient_error(
                     [=](const auto& in) { return weighted_sum(multi_head_attention(in[0], in[1], in[2], heads), w); },
                     {q, k, v});
               }});
  c.push_back({"transformer_block", [](std::mt19937_64& rng) {
                 TransformerConfig cfg{8, 2, 1, 12, 0.0};
                 auto store = std::make_shared<ParameterStore>(rng());
                 auto block = std::make_shared<TransformerBlock>(*store, "block", cfg);
                 Tensor x = uniform_tensor({draw(rng, 1, 2), draw(rng, 1, 4), 8}, rng);
                 const std::uint64_t w = rng();
                 return gradient_error(
                     [=](const auto& in) { return weighted_sum((*block)(in[0], ForwardContext{}), w); }, {x});
               }});

  // Loss heads.
  c.push_back({"mlm_loss", [](std::mt19937_64& rng) {
                 const std::size_t n = draw(rng, 1, 3), l = draw(rng, 1, 5), v = draw(rng, 3, 7);
                 auto d = random_descriptors(rng, Modality::kText, n, l, 1,
                                             [&] { return static_cast<double>(draw(rng, 0, v - 1)); });
                 Tensor logits = uniform_tensor({n, l, v}, rng, -2.0, 2.0);
                 return gradient_error([d](const auto& in) { return mlm_loss(in[0], pointers(d)); }, {logits});
               }});
  c.push_back({"mim_loss", [](std::mt19937_64& rng) {
                 const std::size_t n = draw(rng, 1, 3), p = draw(rng, 1, 4), pd = draw(rng, 1, 4);
                 std::uniform_real_distribution<double> u(-1.0, 1.0);
                 auto d = random_descriptors(rng, Modality::kImage, n, p, pd, [&] { return u(rng); });
                 // Keep every residual clear of the |.| kink.
                 Tensor pred = uniform_tensor({n, p, pd}, rng);
                 for (std::size_t r = 0; r < n; ++r) {
                   for (std::size_t i = 0; i < d[r].positions.size(); ++i) {
                     for (std::size_t k = 0; k < pd; ++k) {
                       double& x = pred.mutable_data()[(r * p + d[r].positions[i]) * pd + k];
                       const double o = d[r].originals[i * pd + k];
                       if (std::abs(x - o) < 1e-2) x = o + 0.1;
                     }
                   }
                 }
                 return gradient_error([d](const auto& in) { return mim_loss(in[0], pointers(d)); }, {pred});
               }});
  c.push_back({"mfm_loss", [](std::mt19937_64& rng) {
                 const std::size_t n = draw(rng, 1, 3), f = draw(rng, 1, 5);
                 std::uniform_real_distribution<double> u(-1.0, 1.0);
                 auto d = random_descriptors(rng, Modality::kTabular, n, f, 1, [&] { return u(rng); });
                 Tensor std_dev = uniform_tensor({f}, rng, 0.5, 2.0);
                 std::vector<double> sd(std_dev.data().begin(), std_dev.data().end());
                 Tensor rec = uniform_tensor({n, f}, rng);
                 return gradient_error([d, sd](const auto& in) { return mfm_loss(in[0], pointers(d), sd); }, {rec});
               }});
  c.push_back({"mtm_loss", [](std::mt19937_64& rng) {
                 const std::size_t n = draw(rng, 1, 3), t = draw(rng, 1, 4), v = draw(rng, 1, 3);
                 std::uniform_real_distribution<double> u(-1.0, 1.0);
                 auto d = random_descriptors(rng, Modality::kTimeSeries, n, t * v, 1, [&] { return u(rng); });
                 Tensor pred = uniform_tensor({n, t, v}, rng);
                 return gradient_error([d](const auto& in) { return mtm_loss(in[0], pointers(d)); }, {pred});
               }});
  c.push_back({"negative_cosine", [](std::mt19937_64& rng) {
                 const Shape s = {draw(rng, 1, 4), draw(rng, 2, 6)};
                 Tensor e = uniform_tensor(s, rng), z = uniform_tensor(s, rng);
                 const std::uint64_t w = rng();
                 return gradient_error(
                     [=](const auto& in) { return weighted_sum(negative_cosine(in[0], in[1]), w); }, {e, z});
               }});
  c.push_back({"simmmm_loss", [](std::mt19937_64& rng) {
                 // Targets are stopped: the predictions match differences and
                 // the targets receive nothing.
                 const Shape s = {draw(rng, 1, 4), draw(rng, 2, 6)};
                 std::vector<Tensor> in = {uniform_tensor(s, rng), uniform_tensor(s, rng), uniform_tensor(s, rng),
                                           uniform_tensor(s, rng)};
                 const ScalarFn f = [](const auto& x) { return simmmm_loss(x[0], x[1], x[2], x[3], true); };
                 double err = gradient_error(f, in, {false, false, true, true});
                 const auto g = analytic_gradients(f, in);
                 for (std::size_t i = 0; i < 2; ++i) {
                   for (double v : g[i]) err = std::max(err, std::abs(v));
                 }
                 return err;
               }});
  c.push_back({"simmmm_loss_unstopped", [](std::mt19937_64& rng) {
                 const Shape s = {draw(rng, 1, 4), draw(rng, 2, 6)};
                 std::vector<Tensor> in = {uniform_tensor(s, rng), uniform_tensor(s, rng), uniform_tensor(s, rng),
                                           uniform_tensor(s, rng)};
                 return gradient_error([](const auto& x) { return simmmm_loss(x[0], x[1], x[2], x[3], false); }, in);
               }});
  return c;
}

}  // namespace

const std::vector<GradientCase>& gradient_cases() {
  static const std::vector<GradientCase> cases = build();
  return cases;
}

double run_gradient_case(const GradientCase& c, std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) worst = std::max(worst, c.instance(rng));
  return worst;
}

}  // namespace lanistr::testing
