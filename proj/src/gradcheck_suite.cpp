// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "gim/context.hpp"
#include "gim/contrastive.hpp"
#include "gim/errors.hpp"
#include "gim/gradcheck.hpp"
#include "gim/ops.hpp"
#include "gim/patching.hpp"
#include "gim/rng.hpp"

namespace gim {
namespace {

using Args = std::vector<Tensor>;
using MultiFn = std::function<Tensor(Graph&, const Args&)>;

Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// Values bounded away from zero, for ops with a kink there.
Tensor off_zero_tensor(Shape shape, SeededRng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    const double mag = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor(std::move(shape), std::move(v));
}

std::size_t dim_in(SeededRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

/// Worst relative error of f over the listed arguments. The output is
/// reduced as sum(r * f(args)) with fixed random weights r.
double check(const MultiFn& f, const Args& args, std::initializer_list<std::size_t> vary, SeededRng& rng,
             double h) {
  Tensor weights;
  {
    Graph g;
    const Tensor y = f(g, args);
    weights = random_tensor(y.shape(), rng, 0.5, 1.5);
  }
  double worst = 0.0;
  for (std::size_t idx : vary) {
    ScalarFn scalar = [&](Graph& g, const Tensor& x) {
      Args local = args;
      local[idx] = x;
      const Tensor y = f(g, local);
      return ops::sum(g, ops::mul(g, y, weights));
    };
    worst = std::max(worst, finite_diff_check(scalar, args[idx], h));
  }
  return worst;
}

GruParams random_gru(std::size_t d_in, std::size_t d_h, SeededRng& rng) {
  GruParams p;
  p.w_update = random_tensor({d_in, d_h}, rng, -0.7, 0.7);
  p.w_reset = random_tensor({d_in, d_h}, rng, -0.7, 0.7);
  p.w_candidate = random_tensor({d_in, d_h}, rng, -0.7, 0.7);
  p.u_update = random_tensor({d_h, d_h}, rng, -0.7, 0.7);
  p.u_reset = random_tensor({d_h, d_h}, rng, -0.7, 0.7);
  p.u_candidate = random_tensor({d_h, d_h}, rng, -0.7, 0.7);
  p.b_update = random_tensor({d_h}, rng, -0.3, 0.3);
  p.b_reset = random_tensor({d_h}, rng, -0.3, 0.3);
  p.b_candidate = random_tensor({d_h}, rng, -0.3, 0.3);
  return p;
}

GruParams gru_from(const Args& a, std::size_t first) {
  GruParams p;
  p.w_update = a[first + 0];
  p.w_reset = a[first + 1];
  p.w_candidate = a[first + 2];
  p.u_update = a[first + 3];
  p.u_reset = a[first + 4];
  p.u_candidate = a[first + 5];
  p.b_update = a[first + 6];
  p.b_reset = a[first + 7];
  p.b_candidate = a[first + 8];
  return p;
}

using CaseFn = double (*)(SeededRng&, double);

double case_add(SeededRng& rng, double h) {
  const Shape s{dim_in(rng, 1, 4), dim_in(rng, 1, 4)};
  return check([](Graph& g, const Args& a) { return ops::add(g, a[0], a[1]); },
               {random_tensor(s, rng), random_tensor(s, rng)}, {0, 1}, rng, h);
}

double case_sub(SeededRng& rng, double h) {
  const Shape s{dim_in(rng, 1, 4), dim_in(rng, 1, 4)};
  return check([](Graph& g, const Args& a) { return ops::sub(g, a[0], a[1]); },
               {random_tensor(s, rng), random_tensor(s, rng)}, {0, 1}, rng, h);
}

double case_mul(SeededRng& rng, double h) {
  const Shape s{dim_in(rng, 1, 4), dim_in(rng, 1, 4)};
  return check([](Graph& g, const Args& a) { return ops::mul(g, a[0], a[1]); },
               {random_tensor(s, rng), random_tensor(s, rng)}, {0, 1}, rng, h);
}

double case_scale(SeededRng& rng, double h) {
  const double alpha = rng.uniform(-2.0, 2.0);
  return check([alpha](Graph& g, const Args& a) { return ops::scale(g, a[0], alpha); },
               {random_tensor({dim_in(rng, 1, 6)}, rng)}, {0}, rng, h);
}

double case_one_minus(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::one_minus(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 6)}, rng)}, {0}, rng, h);
}

double case_add_bias(SeededRng& rng, double h) {
  const std::size_t c = dim_in(rng, 1, 4);
  return check([](Graph& g, const Args& a) { return ops::add_bias(g, a[0], a[1]); },
               {random_tensor({dim_in(rng, 1, 3), dim_in(rng, 1, 3), c}, rng), random_tensor({c}, rng)}, {0, 1}, rng,
               h);
}

double case_sum(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::sum(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng)}, {0}, rng, h);
}

double case_mean(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::mean(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng)}, {0}, rng, h);
}

double case_matmul(SeededRng& rng, double h) {
  const std::size_t m = dim_in(rng, 1, 4), k = dim_in(rng, 1, 4), n = dim_in(rng, 1, 4);
  return check([](Graph& g, const Args& a) { return ops::matmul(g, a[0], a[1]); },
               {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, {0, 1}, rng, h);
}

double case_transpose(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::transpose(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng)}, {0}, rng, h);
}

double case_relu(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::relu(g, a[0]); },
               {off_zero_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng)}, {0}, rng, h);
}

double case_sigmoid(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::sigmoid(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng, -3.0, 3.0)}, {0}, rng, h);
}

double case_tanh(SeededRng& rng, double h) {
  return check([](Graph& g, const Args& a) { return ops::tanh(g, a[0]); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 1, 4)}, rng, -2.0, 2.0)}, {0}, rng, h);
}

double case_conv1d(SeededRng& rng, double h) {
  const std::size_t b = dim_in(rng, 1, 2), cin = dim_in(rng, 1, 3), cout = dim_in(rng, 1, 3);
  const std::size_t k = dim_in(rng, 1, 3), stride = dim_in(rng, 1, 2), pad = rng.index(2);
  const std::size_t len = dim_in(rng, k, k + 4);
  return check([stride, pad](Graph& g, const Args& a) { return ops::conv1d(g, a[0], a[1], a[2], stride, pad); },
               {random_tensor({b, cin, len}, rng), random_tensor({cout, cin, k}, rng), random_tensor({cout}, rng)},
               {0, 1, 2}, rng, h);
}

double case_conv2d(SeededRng& rng, double h) {
  const std::size_t b = dim_in(rng, 1, 2), cin = dim_in(rng, 1, 2), cout = dim_in(rng, 1, 2);
  const std::size_t k = dim_in(rng, 1, 3), stride = dim_in(rng, 1, 2), pad = rng.index(2);
  const std::size_t hh = dim_in(rng, k, k + 2), ww = dim_in(rng, k, k + 2);
  return check(
      [stride, pad](Graph& g, const Args& a) {
        return ops::conv2d(g, a[0], a[1], a[2], {stride, stride}, {pad, pad});
      },
      {random_tensor({b, cin, hh, ww}, rng), random_tensor({cout, cin, k, k}, rng), random_tensor({cout}, rng)},
      {0, 1, 2}, rng, h);
}

double case_avg_pool(SeededRng& rng, double h) {
  const std::size_t wh = dim_in(rng, 1, 2), ww = dim_in(rng, 1, 2);
  const std::array<std::size_t, 2> window{wh, ww};
  return check([window](Graph& g, const Args& a) { return ops::avg_pool(g, a[0], window); },
               {random_tensor({dim_in(rng, 1, 2), wh * dim_in(rng, 1, 3), ww * dim_in(rng, 1, 3)}, rng)}, {0}, rng,
               h);
}

double case_mean_pool(SeededRng& rng, double h) {
  const std::array<std::size_t, 2> axes{1, 2};
  return check([axes](Graph& g, const Args& a) { return ops::mean_pool(g, a[0], axes); },
               {random_tensor({dim_in(rng, 1, 3), dim_in(rng, 1, 3), dim_in(rng, 1, 3), dim_in(rng, 1, 2)}, rng)},
               {0}, rng, h);
}

double case_log_softmax(SeededRng& rng, double h) {
  const std::size_t axis = rng.index(2);
  return check([axis](Graph& g, const Args& a) { return ops::log_softmax(g, a[0], axis); },
               {random_tensor({dim_in(rng, 1, 4), dim_in(rng, 2, 5)}, rng, -3.0, 3.0)}, {0}, rng, h);
}

double case_cross_entropy(SeededRng& rng, double h) {
  const std::size_t rows = dim_in(rng, 1, 4), cols = dim_in(rng, 2, 5);
  std::vector<std::size_t> index(rows);
  for (auto& i : index) i = rng.index(cols);
  return check(
      [index](Graph& g, const Args& a) {
        return ops::gather_cross_entropy(g, ops::log_softmax(g, a[0], 1), index);
      },
      {random_tensor({rows, cols}, rng, -3.0, 3.0)}, {0}, rng, h);
}

double case_gather_rows(SeededRng& rng, double h) {
  const std::size_t rows = dim_in(rng, 1, 4);
  std::vector<std::size_t> index(dim_in(rng, 1, 6));
  for (auto& i : index) i = rng.index(rows);
  return check([index](Graph& g, const Args& a) { return ops::gather_rows(g, a[0], index); },
               {random_tensor({rows, dim_in(rng, 1, 3)}, rng)}, {0}, rng, h);
}

double case_gather_dot(SeededRng& rng, double h) {
  const std::size_t d = dim_in(rng, 1, 4), preds = dim_in(rng, 1, 4), pool = dim_in(rng, 1, 5);
  const std::size_t anchors = dim_in(rng, 1, 4), bag_size = dim_in(rng, 1, 4);
  std::vector<std::size_t> anchor_rows(anchors), bag(anchors * bag_size);
  for (auto& i : anchor_rows) i = rng.index(preds);
  for (auto& i : bag) i = rng.index(pool);
  return check(
      [anchor_rows, bag, bag_size](Graph& g, const Args& a) {
        return ops::gather_dot(g, a[0], anchor_rows, a[1], bag, bag_size);
      },
      {random_tensor({preds, d}, rng), random_tensor({pool, d}, rng)}, {0, 1}, rng, h);
}

double case_permute(SeededRng& rng, double h) {
  std::array<std::size_t, 3> perm{0, 1, 2};
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  return check([perm](Graph& g, const Args& a) { return ops::permute(g, a[0], perm); },
               {random_tensor({dim_in(rng, 1, 3), dim_in(rng, 1, 3), dim_in(rng, 1, 3)}, rng)}, {0}, rng, h);
}

double case_reshape(SeededRng& rng, double h) {
  const std::size_t a0 = dim_in(rng, 1, 3), a1 = dim_in(rng, 1, 3), a2 = dim_in(rng, 1, 3);
  return check([=](Graph& g, const Args& a) { return ops::reshape(g, a[0], Shape{a0 * a1, a2}); },
               {random_tensor({a0, a1, a2}, rng)}, {0}, rng, h);
}

double case_slice(SeededRng& rng, double h) {
  const std::size_t axis = rng.index(2);
  Shape s{dim_in(rng, 2, 5), dim_in(rng, 2, 5)};
  const std::size_t start = rng.index(s[axis]);
  const std::size_t len = 1 + rng.index(s[axis] - start);
  return check([=](Graph& g, const Args& a) { return ops::slice(g, a[0], axis, start, len); },
               {random_tensor(s, rng)}, {0}, rng, h);
}

double case_stack(SeededRng& rng, double h) {
  const Shape s{dim_in(rng, 1, 3), dim_in(rng, 1, 3)};
  const std::size_t axis = rng.index(3);
  return check([axis](Graph& g, const Args& a) { return ops::stack(g, {a[0], a[1], a[2]}, axis); },
               {random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)}, {0, 1, 2}, rng, h);
}

double case_gru_step(SeededRng& rng, double h) {
  const std::size_t b = dim_in(rng, 1, 3), d_in = dim_in(rng, 1, 3), d_h = dim_in(rng, 1, 3);
  const GruParams p = random_gru(d_in, d_h, rng);
  Args args{random_tensor({b, d_in}, rng), random_tensor({b, d_h}, rng)};
  for (const Tensor& t : p.all()) args.push_back(t);
  return check([](Graph& g, const Args& a) { return gru_step(g, a[0], a[1], gru_from(a, 2)); }, args,
               {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, rng, h);
}

double case_context_forward(SeededRng& rng, double h) {
  const std::size_t b = dim_in(rng, 1, 2), steps = dim_in(rng, 2, 4), d_in = dim_in(rng, 1, 3),
                    d_h = dim_in(rng, 1, 3);
  // Blocked mode truncates the recurrence on purpose, so only full BPTT has a
  // finite-difference counterpart.
  SeededRng init = rng.derive(Stream::check, 1);
  const AutoregressiveModule base(0, d_in, d_h, BpttMode::full, init);
  const GruParams p = random_gru(d_in, d_h, rng);
  Args args{random_tensor({b, steps, d_in}, rng)};
  for (const Tensor& t : p.all()) args.push_back(t);
  // Inputs are grad-blocked inside the module, so only the parameters are varied.
  return check(
      [base](Graph& g, const Args& a) {
        AutoregressiveModule module = base;
        module.params() = gru_from(a, 1);
        return context_forward(g, module, a[0]).c;
      },
      args, {1, 2, 3, 4, 5, 6, 7, 8, 9}, rng, h);
}

double case_score(SeededRng& rng, double h) {
  const std::size_t dt = dim_in(rng, 1, 4), da = dim_in(rng, 1, 4);
  return check([](Graph& g, const Args& a) { return score_log_bilinear(g, a[0], a[1], a[2]); },
               {random_tensor({dt}, rng), random_tensor({da}, rng), random_tensor({dt, da}, rng)}, {0, 1, 2}, rng,
               h);
}

double case_infonce_bags(SeededRng& rng, double h) {
  const std::size_t d = dim_in(rng, 1, 3), negatives = dim_in(rng, 1, 4);
  SeededRng init = rng.derive(Stream::check, 2);
  const PredictionHead base(0, {1, 2}, d, d, init);
  Args args{random_tensor({2, d}, rng), random_tensor({2, d}, rng), random_tensor({2, negatives, d}, rng),
            random_tensor({d, d}, rng), random_tensor({d, d}, rng)};
  const std::size_t slot = rng.index(negatives + 1);
  return check(
      [base, slot](Graph& g, const Args& a) {
        PredictionHead head = base;
        head.weight(1) = a[3];
        head.weight(2) = a[4];
        std::vector<ContrastiveBatch> bags;
        for (std::size_t k = 1; k <= 2; ++k) {
          const std::size_t i = k - 1;
          const std::size_t d = a[0].dim(1), n = a[2].dim(1);
          ContrastiveBatch bag;
          bag.anchor = ops::reshape(g, ops::slice(g, a[0], 0, i, 1), Shape{d});
          bag.positive = ops::reshape(g, ops::slice(g, a[1], 0, i, 1), Shape{d});
          bag.negatives = ops::reshape(g, ops::slice(g, a[2], 0, i, 1), Shape{n, d});
          bag.delay = k;
          bag.positive_index = slot;
          bags.push_back(bag);
        }
        return infonce_loss(g, bags, head).loss;
      },
      args, {0, 1, 2, 3, 4}, rng, h);
}

double case_infonce_dense(SeededRng& rng, double h) {
  const std::size_t items = dim_in(rng, 1, 2), steps = dim_in(rng, 3, 5), d = dim_in(rng, 1, 3);
  const std::size_t negatives = dim_in(rng, 1, 4);
  const PredictionPairSet pairs = build_prediction_pairs_seq(steps, 2);
  SeededRng init = rng.derive(Stream::check, 3);
  const PredictionHead base(0, {1, 2}, d, d, init);
  const std::uint64_t neg_seed = rng.next_u64();
  Args args{random_tensor({items * steps, d}, rng), random_tensor({items * steps, d}, rng),
            random_tensor({d, d}, rng), random_tensor({d, d}, rng)};
  return check(
      [=](Graph& g, const Args& a) {
        PredictionHead head = base;
        head.weight(1) = a[2];
        head.weight(2) = a[3];
        SeededRng neg(neg_seed);
        return infonce_loss_dense(g, a[0], a[1], items, pairs, head, negatives, neg).loss;
      },
      args, {0, 1, 2, 3}, rng, h);
}

double case_context_infonce(SeededRng& rng, double h) {
  const std::size_t items = dim_in(rng, 1, 2), steps = dim_in(rng, 3, 5), d_in = dim_in(rng, 1, 3),
                    d_h = dim_in(rng, 1, 3);
  const PredictionPairSet pairs = build_prediction_pairs_seq(steps, 2);
  SeededRng init = rng.derive(Stream::check, 4);
  const PredictionHead base(0, {1, 2}, d_in, d_h, init);
  const std::uint64_t neg_seed = rng.next_u64();
  Args args{random_tensor({items * steps, d_in}, rng), random_tensor({items * steps, d_h}, rng),
            random_tensor({d_in, d_h}, rng), random_tensor({d_in, d_h}, rng)};
  return check(
      [=](Graph& g, const Args& a) {
        PredictionHead head = base;
        head.weight(1) = a[2];
        head.weight(2) = a[3];
        SeededRng neg(neg_seed);
        return context_infonce(g, a[0], a[1], items, pairs, head, 3, neg).loss;
      },
      args, {1, 2, 3}, rng, h);
}

struct Primitive {
  const char* name;
  CaseFn run;
};

constexpr std::array kPrimitives{
    Primitive{"add", case_add},
    Primitive{"sub", case_sub},
    Primitive{"mul", case_mul},
    Primitive{"scale", case_scale},
    Primitive{"one_minus", case_one_minus},
    Primitive{"add_bias", case_add_bias},
    Primitive{"sum", case_sum},
    Primitive{"mean", case_mean},
    Primitive{"matmul", case_matmul},
    Primitive{"transpose", case_transpose},
    Primitive{"relu", case_relu},
    Primitive{"sigmoid", case_sigmoid},
    Primitive{"tanh", case_tanh},
    Primitive{"conv1d", case_conv1d},
    Primitive{"conv2d", case_conv2d},
    Primitive{"avg_pool", case_avg_pool},
    Primitive{"mean_pool", case_mean_pool},
    Primitive{"log_softmax", case_log_softmax},
    Primitive{"gather_cross_entropy", case_cross_entropy},
    Primitive{"gather_rows", case_gather_rows},
    Primitive{"gather_dot", case_gather_dot},
    Primitive{"permute", case_permute},
    Primitive{"reshape", case_reshape},
    Primitive{"slice", case_slice},
    Primitive{"stack", case_stack},
    Primitive{"gru_step", case_gru_step},
    Primitive{"context_forward", case_context_forward},
    Primitive{"score_log_bilinear", case_score},
    Primitive{"infonce_loss", case_infonce_bags},
    Primitive{"infonce_loss_dense", case_infonce_dense},
    Primitive{"context_infonce", case_context_infonce},
};

}  // namespace

std::vector<std::string> gradcheck_primitives() {
  std::vector<std::string> names;
  for (const Primitive& p : kPrimitives) names.emplace_back(p.name);
  return names;
}

std::vector<PrimitiveCheck> run_gradcheck_suite(std::size_t cases, std::uint64_t seed, double tolerance, double h,
                                                const std::vector<std::string>& only) {
  for (const std::string& name : only) {
    const bool known = std::any_of(kPrimitives.begin(), kPrimitives.end(),
                                   [&](const Primitive& p) { return name == p.name; });
    if (!known) throw ValueError("unknown primitive '" + name + "'");
  }
  const SeededRng root(seed);
  std::vector<PrimitiveCheck> out;
  for (std::size_t i = 0; i < kPrimitives.size(); ++i) {
    const Primitive& prim = kPrimitives[i];
    if (!only.empty() && std::find(only.begin(), only.end(), prim.name) == only.end()) continue;
    PrimitiveCheck result{prim.name, cases, 0.0, true};
    for (std::size_t c = 0; c < cases; ++c) {
      SeededRng rng = root.derive(Stream::check, i, c);
      result.worst = std::max(result.worst, prim.run(rng, h));
    }
    result.passed = result.worst < tolerance;
    out.push_back(result);
  }
  return out;
}

}  // namespace gim
