#include <doctest.h>

#include <cmath>

#include "cscon/gradcheck.hpp"
#include "cscon/loss.hpp"

using namespace cscon;
using T = TensorT<float>;
using D = TensorT<double>;

namespace {

// Direct double-precision InfoNCE over an explicit similarity matrix; no
// log-sum-exp tricks, evaluated straight from the printed formula.
double info_nce_reference(const std::vector<std::vector<double>>& sim, double tau) {
  const std::size_t m = sim.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(sim[i][j] / tau);
    total += -std::log(std::exp(sim[i][i] / tau) / denom);
  }
  return total / static_cast<double>(m);
}

template <class Real>
TensorT<Real> tensor3(std::vector<std::vector<std::vector<double>>> rows) {
  const std::int64_t b = rows.size(), m = rows[0].size(), d = rows[0][0].size();
  std::vector<Real> data;
  for (const auto& batch : rows)
    for (const auto& r : batch)
      for (double v : r) data.push_back(static_cast<Real>(v));
  return TensorT<Real>::from_vector(Shape{b, m, d}, std::move(data));
}

}  // namespace

TEST_CASE("cosine_sim basics") {
  CHECK(cosine_sim({1, 0}, {1, 0}) == doctest::Approx(1.0));
  CHECK(cosine_sim({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine_sim({1, 2}, {2, 1}) == doctest::Approx(0.8));
  CHECK(cosine_sim({0.37, -1.2, 5.0}, {0.37, -1.2, 5.0}) == doctest::Approx(1.0));
  bool degenerate = false;
  CHECK(cosine_sim({0, 0}, {1, 2}, &degenerate) == 0.0);
  CHECK(degenerate);
  CHECK_THROWS_AS(cosine_sim({1}, {1, 2}), InvalidArgument);
  CHECK_THROWS_AS(cosine_sim({std::nan("")}, {1.0}), InvalidArgument);
}

TEST_CASE("inner_instance_loss with a single masked patch is zero") {
  auto v = tensor3<float>({{{0.3, -0.8, 0.5}}});
  auto w = tensor3<float>({{{-0.2, 0.9, 0.1}}});
  CHECK(inner_instance_loss(v, w, 1.0).item() == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("identical embeddings give ln M") {
  const std::vector<std::vector<double>> row{{0.4, -0.6, 1.2, 0.0}};
  for (int m : {2, 3, 5, 8}) {
    std::vector<std::vector<double>> vc(m, row[0]), vs(m, {1.0, 0.5, -0.3, 0.9});
    auto loss = inner_instance_loss(tensor3<float>({vc}), tensor3<float>({vs}), 1.0).item();
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(m))).epsilon(1e-6));
  }
}

TEST_CASE("2x2 identity similarity gives ln(1 + exp(-1))") {
  // orthonormal unit rows make the cosine matrix exactly the identity
  auto vc = tensor3<float>({{{1, 0}, {0, 1}}});
  auto vs = tensor3<float>({{{1, 0}, {0, 1}}});
  CHECK(inner_instance_loss(vc, vs, 1.0).item() ==
        doctest::Approx(0.3132616875182228).epsilon(1e-6));
}

TEST_CASE("tau must be positive") {
  auto v = tensor3<float>({{{1, 0}, {0, 1}}});
  CHECK_THROWS_AS(inner_instance_loss(v, v, 0.0), InvalidArgument);
  CHECK_THROWS_AS(inner_instance_loss(v, v, -1.0), InvalidArgument);
}

TEST_CASE("scale invariance of the cosine-based loss") {
  Rng rng(5);
  std::vector<std::vector<double>> vc, vs;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> a, b;
    for (int d = 0; d < 6; ++d) {
      a.push_back(rng.uniform(-1.0, 1.0));
      b.push_back(rng.uniform(-1.0, 1.0));
    }
    vc.push_back(a);
    vs.push_back(b);
  }
  const double base =
      inner_instance_loss(tensor3<float>({vc}), tensor3<float>({vs}), 0.5).item();
  auto scaled_c = vc;
  for (auto& x : scaled_c[2]) x *= 37.5;
  auto scaled_s = vs;
  for (auto& x : scaled_s[0]) x *= 0.004;
  const double scaled =
      inner_instance_loss(tensor3<float>({scaled_c}), tensor3<float>({scaled_s}), 0.5).item();
  CHECK(std::abs(base - scaled) < 1e-5);
}

TEST_CASE("loss upper bound for cosine-bounded similarities") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_int(6));
    const double tau = 0.1 + rng.uniform() * 1.9;
    std::vector<std::vector<double>> vc, vs;
    for (int i = 0; i < m; ++i) {
      std::vector<double> a, b;
      for (int d = 0; d < 5; ++d) {
        a.push_back(rng.uniform(-1.0, 1.0));
        b.push_back(rng.uniform(-1.0, 1.0));
      }
      vc.push_back(a);
      vs.push_back(b);
    }
    const double loss =
        inner_instance_loss(tensor3<float>({vc}), tensor3<float>({vs}), tau).item();
    CHECK(loss <= 2.0 / tau + std::log(static_cast<double>(m)) + 1e-5);
  }
}

TEST_CASE("loss decreases monotonically in the diagonal margin") {
  // sim(margin): diagonal = margin, off-diagonal = -margin, tau small
  const double tau = 0.1;
  double prev = std::numeric_limits<double>::infinity();
  for (double margin : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    std::vector<float> data;
    std::vector<std::vector<double>> ref(3, std::vector<double>(3));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double v = (i == j) ? margin : -margin;
        ref[i][j] = v;
        data.push_back(static_cast<float>(v));
      }
    auto sim = T::from_vector(Shape{1, 3, 3}, data);
    const double loss = info_nce_from_sim(sim, tau).item();
    CHECK(loss == doctest::Approx(info_nce_reference(ref, tau)).epsilon(1e-5));
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-8);  // margin 1 at tau 0.1 drives the loss to ~0
}

TEST_CASE("gradients of inner_instance_loss match finite differences") {
  Rng rng(11);
  ParamStoreT<double> store;
  auto vc = store.create("vc", Shape{1, 5, 7});
  auto vs = store.create("vs", Shape{1, 5, 7});
  for (auto& v : vc.values()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : vs.values()) v = rng.uniform(-1.0, 1.0);
  GradCheckOptions opt;
  opt.step = 1e-7;  // rows have O(1) norms here
  auto report = grad_check<double>(
      [&]() { return inner_instance_loss(vc, vs, 0.7); }, store, opt);
  CAPTURE(report.max_rel_err);
  CHECK(report.frac_within_tol == 1.0);
  CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("inter equals inner exactly at batch size 1") {
  Rng rng(13);
  std::vector<float> a(4 * 6), b(4 * 6);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto inner = inner_instance_loss(T::from_vector(Shape{1, 4, 6}, a),
                                   T::from_vector(Shape{1, 4, 6}, b), 0.8)
                   .item();
  auto inter = inter_instance_loss(T::from_vector(Shape{4, 6}, a),
                                   T::from_vector(Shape{4, 6}, b), 0.8)
                   .item();
  CHECK(inner == inter);
}

TEST_CASE("inter_instance_loss on the hand-evaluated 2-row case") {
  // V_c rows (1,0), (0,1); V_s rows (1,0), (1,1): sim = [[1, .7071], [0, .7071]]
  auto vc = T::from_vector(Shape{2, 2}, {1, 0, 0, 1});
  auto vs = T::from_vector(Shape{2, 2}, {1, 0, 1, 1});
  CHECK(inter_instance_loss(vc, vs, 1.0).item() ==
        doctest::Approx(0.4791096452).epsilon(1e-6));
}

TEST_CASE("identical embeddings across the batch collapse to ln(B*M)") {
  std::vector<float> rows(6 * 3, 0.0f);
  for (int r = 0; r < 6; ++r) {
    rows[r * 3 + 0] = 0.3f;
    rows[r * 3 + 1] = -0.7f;
    rows[r * 3 + 2] = 0.2f;
  }
  auto v = T::from_vector(Shape{6, 3}, rows);
  CHECK(inter_instance_loss(v, v, 1.0).item() ==
        doctest::Approx(std::log(6.0)).epsilon(1e-6));
}

TEST_CASE("alignment_target_loss endpoints and toy value") {
  auto full = T::from_vector(Shape{2, 2}, {1, 0, 0, 1});
  SUBCASE("identical representations give -1") {
    CHECK(alignment_target_loss(full, full).item() == doctest::Approx(-1.0).epsilon(1e-6));
  }
  SUBCASE("orthogonal token pairs give 0") {
    auto ortho = T::from_vector(Shape{2, 2}, {0, 1, 1, 0});
    CHECK(alignment_target_loss(full, ortho).item() == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("hand-evaluated mean cosine") {
    auto branch = T::from_vector(Shape{2, 2}, {1, 1, 0, 2});
    CHECK(alignment_target_loss(full, branch).item() ==
          doctest::Approx(-0.8535533906).epsilon(1e-6));
  }
}

TEST_CASE("alignment_target_loss gradients match finite differences") {
  Rng rng(17);
  ParamStoreT<double> store;
  auto full = store.create("full", Shape{3, 5});
  auto branch = store.create("branch", Shape{3, 5});
  for (auto& v : full.values()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : branch.values()) v = rng.uniform(-1.0, 1.0);
  GradCheckOptions opt;
  opt.step = 1e-7;
  auto report = grad_check<double>(
      [&]() { return alignment_target_loss(full, branch); }, store, opt);
  CHECK(report.frac_within_tol == 1.0);
  CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("cross_entropy of uniform logits is ln C") {
  auto logits = T::constant(Shape{4, 8}, 0.37f);
  CHECK(cross_entropy(logits, {0, 3, 5, 7}).item() ==
        doctest::Approx(std::log(8.0)).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3, 5, 9}), InvalidArgument);
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3, 5}), InvalidArgument);
}
