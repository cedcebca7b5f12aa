#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mglow/data.hpp"
#include "mglow/errors.hpp"
#include "support.hpp"

using namespace mglow;
using namespace testing_support;

TEST_CASE("spd field generator") {
  SpdFieldOptions opt;
  opt.smoothness = 1.0;
  const Field c = synth_spd_field(1, {3, 3}, 2, opt);
  for (int loc = 1; loc < c.locations(); ++loc)
    for (int ch = 0; ch < 2; ++ch) CHECK(c.get(loc, ch) == c.get(0, ch));

  opt.smoothness = 0.3;
  const Field a = synth_spd_field(1, {4, 4, 4}, 1, opt);
  const Field b = synth_spd_field(2, {4, 4, 4}, 1, opt);
  a.validate();
  for (int p = 0; p < a.points(); ++p) {
    const VectorXd ev = sym_eigen(Manifold::as_matrix(a.point(p), 3)).values;
    CHECK(ev.minCoeff() >= 0.1 - 1e-12);
    CHECK(ev.maxCoeff() <= 10.0 + 1e-12);
  }
  double mean_d = 0.0;
  for (int p = 0; p < a.points(); ++p) mean_d += a.manifold().distance(a.point(p), b.point(p)) / a.points();
  CHECK(mean_d > 0.0);
  CHECK(synth_spd_field(1, {4, 4, 4}, 1, opt).data() == a.data());
  opt.smoothness = 1.5;
  CHECK_THROWS_AS(synth_spd_field(1, {2}, 1, opt), ValidationError);
}

TEST_CASE("odf surrogate") {
  const MatrixXd u = odf_directions(12);
  CHECK(u.rows() == 12);
  for (int i = 0; i < 6; ++i) CHECK((u.row(i) + u.row(i + 6)).norm() == 0.0);
  for (int i = 0; i < 12; ++i) CHECK(u.row(i).norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(odf_directions(7), ValidationError);

  const VectorXd iso = odf_of_tensor(MatrixXd::Identity(3, 3), u);
  for (int k = 0; k < 12; ++k) CHECK(iso[k] == doctest::Approx(1.0 / std::sqrt(12.0)).epsilon(1e-14));

  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Ambient d = random_point(Manifold::spd(3), rng);
    const MatrixXd dm = Manifold::as_matrix(d, 3);
    const VectorXd x = odf_of_tensor(dm, u);
    CHECK(x.minCoeff() >= 0.0);
    CHECK(std::abs(x.norm() - 1.0) < 1e-12);
    CHECK((odf_of_tensor(4.5 * dm, u) - x).cwiseAbs().maxCoeff() < 1e-12);
    // Equivariance under simultaneous rotation of D and the direction set.
    const MatrixXd r = random_rotation(rng, 3);
    CHECK((odf_of_tensor(r * dm * r.transpose(), u * r.transpose()) - x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("paired dataset") {
  PairedOptions opt;
  opt.noise = 0.0;
  const PairedDataset ds = synth_paired(5, {4, 4, 4}, 4, 12, opt);
  REQUIRE(ds.pairs.size() == 4);
  CHECK(ds.pairs[0].group == 'A');
  CHECK(ds.pairs[1].group == 'B');
  const MatrixXd u = odf_directions(12);
  for (const auto& p : ds.pairs) {
    p.source.validate();
    p.target.validate();
    for (int v = 0; v < p.target.points(); ++v)
      CHECK((p.target.point(v) - odf_of_tensor(Manifold::as_matrix(p.source.point(v), 3), u)).norm() < 1e-15);
  }
  CHECK(synth_paired(5, {4, 4, 4}, 4, 12, opt).pairs[3].target.data() == ds.pairs[3].target.data());

  opt.noise = 0.05;
  const PairedDataset noisy = synth_paired(5, {4, 4, 4}, 2, 12, opt);
  double mean_d = 0.0;
  const Manifold& tm = noisy.pairs[0].target.manifold();
  for (int v = 0; v < 64; ++v) mean_d += tm.distance(noisy.pairs[0].target.point(v), ds.pairs[0].target.point(v)) / 64;
  // Mean norm of an 11-dimensional tangent Gaussian with std 0.05 is about 0.05 sqrt(11).
  CHECK(mean_d == doctest::Approx(0.05 * std::sqrt(11.0)).epsilon(0.15));
}

TEST_CASE("planted groups differ only inside the planted boxes") {
  PairedOptions clean, planted;
  planted.plant.enabled = true;
  const PairedDataset a = synth_paired(9, {4, 4, 4}, 2, 12, clean);
  const PairedDataset b = synth_paired(9, {4, 4, 4}, 2, 12, planted);
  const auto aniso = planted_anisotropy_mask({4, 4, 4});
  const auto scale = planted_scale_mask({4, 4, 4});
  int n_aniso = 0, n_scale = 0;
  for (int v = 0; v < 64; ++v) {
    n_aniso += aniso[v];
    n_scale += scale[v];
    CHECK_FALSE((aniso[v] && scale[v]));
  }
  CHECK(n_aniso == 8);
  CHECK(n_scale == 8);
  // Group A untouched.
  CHECK(a.pairs[0].source.data() == b.pairs[0].source.data());
  const Field& s0 = a.pairs[1].source;
  const Field& s1 = b.pairs[1].source;
  const Field& t0 = a.pairs[1].target;
  const Field& t1 = b.pairs[1].target;
  for (int v = 0; v < 64; ++v) {
    const double ds = s0.manifold().distance(s0.point(v), s1.point(v));
    const double dt = t0.manifold().distance(t0.point(v), t1.point(v));
    if (aniso[v]) {
      CHECK(ds > 0.1);
      CHECK(dt > 1e-3);
    } else if (scale[v]) {
      CHECK(ds > 0.1);
      CHECK(dt < 1e-7);
    } else {
      CHECK(s0.point(v) == s1.point(v));
      CHECK(t0.point(v) == t1.point(v));
    }
  }
}

TEST_CASE("texture pairs") {
  Field flat(Manifold::positive_reals(), {8, 8}, 3);
  for (int p = 0; p < flat.points(); ++p) flat.point(p)[0] = 2.5;
  const Field cov = window_covariance(flat);
  for (int p = 0; p < cov.points(); ++p)
    CHECK((Manifold::as_matrix(cov.point(p), 3) - 1e-4 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);

  const PairedDataset ds = synth_texture_pair(4, {8, 9}, 2);
  REQUIRE(ds.pairs.size() == 2);
  const Field& tex = ds.pairs[0].target;
  const Field& c = ds.pairs[0].source;
  c.validate();
  tex.validate();
  // Brute-force population covariance at an interior voxel (3, 4) and a corner (0, 0).
  for (auto [i, j] : {std::pair{3, 4}, std::pair{0, 0}}) {
    std::vector<double> xs[3];
    for (int a = i - 1; a <= i + 1; ++a)
      for (int b = j - 1; b <= j + 1; ++b) {
        if (a < 0 || b < 0 || a >= 8 || b >= 9) continue;
        for (int ch = 0; ch < 3; ++ch) xs[ch].push_back(tex.point((a * 9 + b) * 3 + ch)[0]);
      }
    const double n = static_cast<double>(xs[0].size());
    const MatrixXd got = Manifold::as_matrix(c.point(i * 9 + j), 3);
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) {
        double mp = 0, mq = 0, s = 0;
        for (size_t k = 0; k < xs[0].size(); ++k) {
          mp += xs[p][k] / n;
          mq += xs[q][k] / n;
        }
        for (size_t k = 0; k < xs[0].size(); ++k) s += (xs[p][k] - mp) * (xs[q][k] - mq) / n;
        if (p == q) s += 1e-4;
        CHECK(got(p, q) == doctest::Approx(s).epsilon(1e-12));
      }
  }
  CHECK_THROWS_AS(synth_texture_pair(1, {4, 8}), ValidationError);
}

TEST_CASE("field files") {
  Rng rng(6);
  for (const Manifold& m : all_manifolds()) {
    const Field f = random_field(m, {2, 3}, 2, rng);
    const std::string bytes = encode_field(f);
    const Field g = decode_field(bytes);
    CHECK(g.data() == f.data());
    CHECK(g.extents() == f.extents());
    CHECK(g.manifold().kind() == m.kind());
    CHECK(g.manifold().chart() == m.chart());
    CHECK(encode_field(g) == bytes);
  }
  const Field f = random_field(Manifold::positive_reals(), {4}, 1, rng);
  std::string bytes = encode_field(f);
  CHECK(bytes.substr(0, 4) == "MFLD");
  CHECK(bytes.size() == 4 + 2 + 1 + 2 + 1 + 1 + 4 + 4 + 4 * 8);

  CHECK_THROWS_WITH_AS(decode_field(bytes.substr(0, bytes.size() - 3)), doctest::Contains("payload length"),
                       FormatError);
  CHECK_THROWS_WITH_AS(decode_field(bytes.substr(0, 10)), doctest::Contains("offset 10"), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_field(bad), doctest::Contains("offset 0"), FormatError);
  bad = bytes;
  bad[4] = 7;
  CHECK_THROWS_WITH_AS(decode_field(bad), doctest::Contains("version"), FormatError);
  Field neg = f;
  neg.point(2)[0] = -1.0;
  CHECK_THROWS_AS(decode_field(encode_field(neg)), InvalidPointError);

  const auto dir = std::filesystem::temp_directory_path() / "mglow_test_data";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "f.mfld").string();
  write_field(path, f);
  CHECK(read_field(path).data() == f.data());
  CHECK_THROWS_AS(read_field((dir / "missing.mfld").string()), FormatError);

  const Manifold pole = Manifold::sphere(VectorXd::Constant(3, 1.0));
  const Field s = random_field(Manifold::sphere(3), {2}, 1, rng);
  const Field r = rechart(s, pole);
  CHECK(r.data() == s.data());
  CHECK(r.manifold().pole() == pole.pole());
  CHECK_THROWS_AS(rechart(s, Manifold::sphere(4)), ShapeError);
}

TEST_CASE("dataset split") {
  auto [train, test] = split_dataset(1065, 0.8, 1);
  CHECK(train.size() == 852);
  CHECK(test.size() == 213);
  std::vector<int> all(train);
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 1065; ++i) CHECK(all[i] == i);
  CHECK(split_dataset(1065, 0.8, 1).first == train);
  CHECK(split_dataset(1065, 0.8, 2).first != train);
  CHECK_THROWS_AS(split_dataset(2, 0.1, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(1, 0.5, 1), ValidationError);
}

TEST_CASE("manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "mglow_test_data";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "manifest.tsv").string();
  const std::vector<ManifestEntry> e = {{0, "train", 'A', "s0.mfld", "t0.mfld"}, {1, "test", 'B', "s1.mfld", "t1.mfld"}};
  write_manifest(path, e);
  const auto r = read_manifest(path);
  REQUIRE(r.size() == 2);
  CHECK(r[1].split == "test");
  CHECK(r[1].group == 'B');
  CHECK(r[1].target == "t1.mfld");
  write_file_atomic(path, "0\ttrain\tA\tonly_source\n");
  CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains(":1:"), FormatError);
}
