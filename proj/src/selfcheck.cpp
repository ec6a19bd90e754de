#include "sdetr/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "sdetr/attention.hpp"
#include "sdetr/cost_model.hpp"
#include "sdetr/gradcheck.hpp"
#include "sdetr/matching.hpp"
#include "sdetr/ops.hpp"

namespace sdetr {

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return Tensor({r, c}, std::move(v));
}

std::vector<double> loop_product(std::span<const double> a, std::span<const double> b, std::size_t m,
                                 std::size_t k, std::size_t n, bool b_transposed) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * (b_transposed ? b[j * k + t] : b[t * n + j]);
  return c;
}

template <typename F>
CheckOutcome guarded(const std::string& name, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

CheckOutcome check_trace(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng() % 8, hp = 1 + rng() % 8, w = 1 + rng() % 8, wp = 1 + rng() % 8;
    const Tensor q = random_tensor(h, w, rng), k = random_tensor(hp, w, rng), v = random_tensor(hp, wp, rng);
    const auto p = loop_product(q.data(), k.data(), h, w, hp, true);
    const auto a = loop_product(p, v.data(), h, hp, wp, false);
    const Tensor t = qkva_trace(q, k, v);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - t.data()[i]));
  }
  std::ostringstream os;
  os << "200 shapes, max |diff| " << worst;
  return {"qkva_trace", worst <= 1e-12, os.str()};
}

CheckOutcome check_cost(std::mt19937_64& rng) {
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t heads = std::size_t{1} << (rng() % 3);
    const AttentionDims d{1 + rng() % 10, 1 + rng() % 10, heads * (1 + rng() % 3), heads * (1 + rng() % 3), heads};
    CostCounters c;
    attention_forward(random_tensor(d.h, d.w, rng), random_tensor(d.h_prime, d.w, rng),
                      random_tensor(d.h_prime, d.w_prime, rng), heads, &c);
    const AttnCost a = attn_cost(d);
    if (a.macs != c.macs || a.p_units != c.peak_p || a.a_units != c.peak_a) ++mismatches;
  }
  return {"attn_cost", mismatches == 0, std::to_string(mismatches) + " of 50 dims disagree"};
}

CheckOutcome check_head_memory(std::mt19937_64& rng) {
  const Tensor q = random_tensor(6, 8, rng), k = random_tensor(5, 8, rng), v = random_tensor(5, 8, rng);
  CostCounters one;
  attention_forward(q, k, v, 1, &one);
  bool ok = true;
  for (std::size_t n : {2u, 4u, 8u}) {
    CostCounters c;
    attention_forward(q, k, v, n, &c);
    ok = ok && c.peak_p == n * one.peak_p && c.peak_a == one.peak_a && c.macs == one.macs;
  }
  return {"head_memory_law", ok, "n in {1,2,4,8} on 6x5x8x8"};
}

CheckOutcome check_level_ratio() {
  const auto r = model_cost(parse_config("1-1-1-1"), 512, 512);
  std::uint64_t l3 = 0, l4 = 0;
  for (const auto& row : r.per_layer) {
    if (row.kind == BlockKind::EncoderSelf) (row.level == 3 ? l3 : l4) = row.cost.macs;
  }
  return {"level_ratio", l3 == 16 * l4, std::to_string(l3) + " / " + std::to_string(l4)};
}

CheckOutcome check_hungarian(std::mt19937_64& rng) {
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 4, m = n + rng() % 3;
    CostMatrix c{n, m, std::vector<double>(n * m)};
    for (auto& x : c.values) x = static_cast<double>(rng() % 5);
    std::vector<std::size_t> cols(m);
    std::iota(cols.begin(), cols.end(), 0);
    double best = INFINITY;
    std::vector<std::size_t> best_pick;
    do {
      double total = 0.0;
      for (std::size_t r = 0; r < n; ++r) total += c(r, cols[r]);
      std::vector<std::size_t> pick(cols.begin(), cols.begin() + n);
      if (total < best || (total == best && pick < best_pick)) {
        best = total;
        best_pick = pick;
      }
    } while (std::next_permutation(cols.begin(), cols.end()));
    const Assignment a = hungarian(c);
    for (std::size_t r = 0; r < n; ++r) {
      if (a.pairs[r].second != best_pick[r]) {
        ++mismatches;
        break;
      }
    }
  }
  return {"hungarian", mismatches == 0, std::to_string(mismatches) + " of 100 matrices disagree"};
}

CheckOutcome check_gradients(std::mt19937_64& rng) {
  std::vector<double> v(6 * 8);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  const Tensor q = Tensor::parameter({6, 8}, v);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  const Tensor k = Tensor::parameter({6, 8}, v);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  const Tensor val = Tensor::parameter({6, 8}, v);
  const Tensor weights = random_tensor(6, 8, rng);
  const auto r = grad_check([&] { return sum(mul(weights, attention_forward(q, k, val, 2))); }, {q, k, val});
  std::ostringstream os;
  os << "attention, max rel error " << r.max_rel_error;
  return {"gradients", r.max_rel_error < 1e-4, os.str()};
}

}  // namespace

std::vector<CheckOutcome> run_selfcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {
      guarded("qkva_trace", [&] { return check_trace(rng); }),
      guarded("attn_cost", [&] { return check_cost(rng); }),
      guarded("head_memory_law", [&] { return check_head_memory(rng); }),
      guarded("level_ratio", [] { return check_level_ratio(); }),
      guarded("hungarian", [&] { return check_hungarian(rng); }),
      guarded("gradients", [&] { return check_gradients(rng); }),
  };
}

}  // namespace sdetr
