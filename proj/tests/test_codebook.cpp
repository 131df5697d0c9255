#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "vqclone/codebook.hpp"
#include "vqclone/gradcheck.hpp"

using namespace vqclone;
using vq::Codebook;
using vq::CodeSequence;

namespace {

// Independent brute-force nearest-neighbor scan: materialize every distance,
// then pick the first minimum.
std::size_t brute_force_nearest(const double* z, const Tensor& entries) {
  std::vector<double> dist(entries.rows());
  for (std::size_t k = 0; k < entries.rows(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < entries.cols(); ++j) {
      double d = z[j] - entries.at(k, j);
      s += d * d;
    }
    dist[k] = s;
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < dist.size(); ++k)
    if (dist[k] < dist[best]) best = k;
  return best;
}

Tensor random_frames(std::size_t t, std::size_t d, std::uint64_t seed) {
  Tensor out(t, d);
  Rng rng(seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(-1.0, 1.0);
  return out;
}

}  // namespace

TEST_CASE("quantize: exact entry match selects that entry") {
  Codebook cb = Codebook::random(8, 4, 11);
  Tensor z(1, 4);
  for (std::size_t j = 0; j < 4; ++j) z.at(0, j) = cb.entries().at(3, j);
  CodeSequence cs = vq::quantize(z, cb);
  CHECK(cs.indices[0] == 3);
  CHECK(cs.vectors.bit_equal(z));
}

TEST_CASE("quantize: single-entry codebook maps everything to 0") {
  Codebook cb = Codebook::random(1, 4, 5);
  Tensor z = random_frames(10, 4, 6);
  CodeSequence cs = vq::quantize(z, cb);
  for (std::size_t idx : cs.indices) CHECK(idx == 0);
}

TEST_CASE("quantize: agrees with brute-force oracle at K=160, D=64") {
  Codebook cb = Codebook::random(160, 64, 2024);
  Tensor z = random_frames(300, 64, 2025);
  CodeSequence cs = vq::quantize(z, cb);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    CHECK(cs.indices[t] == brute_force_nearest(z.data() + t * 64, cb.entries()));
    // selected vector is the entry, bit for bit
    for (std::size_t j = 0; j < 64; ++j)
      CHECK(cs.vectors.at(t, j) == cb.entries().at(cs.indices[t], j));
  }
}

TEST_CASE("quantize: exact ties resolve to the lowest index") {
  // Entries 1 and 2 are identical; frame sits exactly on them.
  Tensor e(3, 2, {5.0, 5.0, 1.0, -1.0, 1.0, -1.0});
  Tensor z(1, 2, {1.0, -1.0});
  CHECK(vq::quantize(z, e).indices[0] == 1);

  // Equidistant by symmetry: origin between (1,0) and (-1,0).
  Tensor e2(2, 2, {1.0, 0.0, -1.0, 0.0});
  Tensor z2(1, 2, {0.0, 0.0});
  CHECK(vq::quantize(z2, e2).indices[0] == 0);
}

TEST_CASE("quantize: empty sequence and dimension mismatch") {
  Codebook cb = Codebook::random(4, 3, 1);
  CodeSequence cs = vq::quantize(Tensor(0, 3), cb);
  CHECK(cs.length() == 0);
  CHECK_THROWS_AS(vq::quantize(Tensor(2, 5), cb), ShapeError);
}

TEST_CASE("quantize properties: idempotence and non-increasing distance") {
  Codebook cb = Codebook::random(24, 6, 77);
  Tensor z = random_frames(40, 6, 78);
  CodeSequence cs = vq::quantize(z, cb);
  CodeSequence again = vq::quantize(cs.vectors, cb);
  CHECK(again.indices == cs.indices);

  for (std::size_t t = 0; t < z.rows(); ++t) {
    double chosen = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      double d = z.at(t, j) - cs.vectors.at(t, j);
      chosen += d * d;
    }
    for (std::size_t k = 0; k < cb.size(); ++k) {
      double other = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        double d = z.at(t, j) - cb.entries().at(k, j);
        other += d * d;
      }
      CHECK(chosen <= other);
    }
  }
}

TEST_CASE("vq_loss and commitment_loss: values and gradient routing") {
  SUBCASE("coincident z and q give zero") {
    ad::Graph g;
    Tensor z0 = random_frames(5, 3, 4);
    ad::Value z = g.param("z", z0);
    ad::Value q = g.param("q", z0);
    CHECK(g.scalar(vq::vq_loss(g, z, q)) == 0.0);
    CHECK(g.scalar(vq::commitment_loss(g, z, q)) == 0.0);
  }

  SUBCASE("hand-computed single frame: unit distance") {
    // z = e1 + first-axis offset 1 -> squared distance 1, one frame -> 1.0
    Tensor z0(1, 4, {1.0, 0.0, 0.0, 0.0});
    Tensor q0(1, 4, {0.0, 0.0, 0.0, 0.0});
    ad::Graph g;
    ad::Value z = g.param("z", z0);
    ad::Value q = g.param("q", q0);
    ad::Value lv = vq::vq_loss(g, z, q);
    ad::Value lc = vq::commitment_loss(g, z, q);
    CHECK(g.scalar(lv) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(g.scalar(lc) == doctest::Approx(1.0).epsilon(1e-15));

    // forward values agree; only the gradient routing differs
    g.backward(lv);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad("z")[i] == 0.0);
    CHECK(g.grad("q")[0] != 0.0);
  }

  SUBCASE("commitment gradient mirror: codebook side severed") {
    Tensor z0(1, 4, {1.0, 0.0, 0.0, 0.0});
    Tensor q0(1, 4, {0.0, 0.0, 0.0, 0.0});
    ad::Graph g;
    ad::Value z = g.param("z", z0);
    ad::Value q = g.param("q", q0);
    g.backward(vq::commitment_loss(g, z, q));
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad("q")[i] == 0.0);
    CHECK(g.grad("z")[0] != 0.0);
  }

  SUBCASE("gradients match finite differences") {
    Tensor z0 = random_frames(4, 3, 21);
    Tensor q0 = random_frames(4, 3, 22);
    auto build_vq = [&](ad::Graph& g) {
      return vq::vq_loss(g, g.param("z", z0), g.param("q", q0));
    };
    auto build_c = [&](ad::Graph& g) {
      return vq::commitment_loss(g, g.param("z", z0), g.param("q", q0));
    };
    CHECK(ad::check_gradients(build_vq).max_rel_err < 1e-4);
    CHECK(ad::check_gradients(build_c).max_rel_err < 1e-4);
  }

  SUBCASE("forward equality for quantized pairs") {
    Codebook cb = Codebook::random(12, 5, 3);
    Tensor z0 = random_frames(9, 5, 8);
    CodeSequence cs = vq::quantize(z0, cb);
    double gap = vq::quantization_gap(z0, cs.vectors);
    ad::Graph g;
    ad::Value z = g.param("z", z0);
    ad::Value q = g.input(cs.vectors);
    CHECK(g.scalar(vq::vq_loss(g, z, q)) == doctest::Approx(gap).epsilon(1e-12));
    CHECK(g.scalar(vq::commitment_loss(g, z, q)) ==
          doctest::Approx(gap).epsilon(1e-12));
  }
}

TEST_CASE("usage_stats") {
  SUBCASE("degenerate: single code used") {
    CodeSequence s;
    s.indices = {0, 0, 0, 0};
    auto r = vq::usage_stats({s}, 16);
    CHECK(r.perplexity == doctest::Approx(1.0));
    CHECK(r.used_fraction == doctest::Approx(1.0 / 16.0));
  }
  SUBCASE("uniform usage reaches perplexity K") {
    CodeSequence s;
    for (std::size_t k = 0; k < 10; ++k) s.indices.push_back(k);
    auto r = vq::usage_stats({s}, 10);
    CHECK(r.perplexity == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(r.used_fraction == doctest::Approx(1.0));
  }
  SUBCASE("fair coin over two codes: perplexity 2, fraction 2/160") {
    CodeSequence s;
    s.indices = {0, 0, 1, 1};
    auto r = vq::usage_stats({s}, 160);
    CHECK(r.perplexity == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.used_fraction == doctest::Approx(2.0 / 160.0));
  }
  SUBCASE("out-of-range index is rejected") {
    CodeSequence s;
    s.indices = {5};
    CHECK_THROWS_AS(vq::usage_stats({s}, 4), ShapeError);
  }
  SUBCASE("no frames") {
    auto r = vq::usage_stats({}, 8);
    CHECK(r.total_frames == 0);
    CHECK(r.perplexity == 0.0);
    CHECK(r.used_fraction == 0.0);
  }
}

TEST_CASE("code sequence CSV export") {
  CodeSequence s;
  s.indices = {3, 1, 4};
  std::string path = "codes_test_tmp.csv";
  vq::write_codes_csv(path, s);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "frame_index,code_id");
  std::getline(f, line);
  CHECK(line == "0,3");
  std::getline(f, line);
  CHECK(line == "1,1");
  std::getline(f, line);
  CHECK(line == "2,4");
  f.close();
  std::remove(path.c_str());
}
