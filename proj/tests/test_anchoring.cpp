#include <gsproto/anchoring.hpp>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

namespace gsproto {
namespace {

using V = Vec3<double>;

PrimitiveSet<double> at_positions(const std::vector<V> &pos) {
  PrimitiveSet<double> s;
  for (const auto &p : pos) {
    GaussianPrimitive<double> g;
    g.position = p;
    s.primitives.push_back(g);
  }
  return s;
}

std::vector<int> oracle(const std::vector<V> &pts, const std::vector<V> &anchors) {
  std::vector<int> out;
  for (const auto &p : pts) {
    int best = 0;
    for (int k = 1; k < int(anchors.size()); ++k) {
      const V a = p - anchors[std::size_t(k)], b = p - anchors[std::size_t(best)];
      const double da = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
      const double db = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
      if (da < db)
        best = k;
    }
    out.push_back(best);
  }
  return out;
}

std::vector<V> random_points(std::mt19937 &rng, int n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<V> out;
  for (int i = 0; i < n; ++i)
    out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

std::vector<V> lattice_points(std::mt19937 &rng, int n, int half) {
  std::uniform_int_distribution<int> u(-half, half);
  std::vector<V> out;
  for (int i = 0; i < n; ++i)
    out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

TEST(SampleAnchors, FractionOfTenIsTwo) {
  std::vector<V> pts;
  for (int i = 0; i < 10; ++i)
    pts.emplace_back(i, 0, 0);
  EXPECT_EQ(sample_anchors(pts, AnchorAmount::fraction(1.0 / 5), 1).size(), 2u);
  EXPECT_EQ(sample_anchors(pts, AnchorAmount::fraction(1.0 / 2), 1).size(), 5u);
  EXPECT_EQ(sample_anchors(pts, AnchorAmount::count(7), 1).size(), 7u);
}

TEST(SampleAnchors, FullFractionIsPermutation) {
  std::mt19937 rng(3);
  const auto pts = random_points(rng, 40, 1.0);
  auto a = sample_anchors(pts, AnchorAmount::fraction(1.0), 9);
  ASSERT_EQ(a.size(), pts.size());
  auto key = [](const V &v) { return std::tuple(v[0], v[1], v[2]); };
  std::multiset<std::tuple<double, double, double>> x, y;
  for (const auto &p : pts)
    x.insert(key(p));
  for (const auto &p : a)
    y.insert(key(p));
  EXPECT_EQ(x, y);
}

TEST(SampleAnchors, SubsetWithoutReplacementAndDeterministic) {
  std::mt19937 rng(4);
  const auto pts = random_points(rng, 50, 1.0);
  const auto a = sample_anchors(pts, AnchorAmount::count(20), 77);
  const auto b = sample_anchors(pts, AnchorAmount::count(20), 77);
  EXPECT_EQ(a, b);
  std::set<std::size_t> idx;
  for (const auto &p : a) {
    const auto it = std::find(pts.begin(), pts.end(), p);
    ASSERT_NE(it, pts.end());
    idx.insert(std::size_t(it - pts.begin()));
  }
  EXPECT_EQ(idx.size(), 20u);
  EXPECT_NE(sample_anchors(pts, AnchorAmount::count(20), 78), a);
}

TEST(SampleAnchors, RejectsBadCounts) {
  const std::vector<V> pts(5, V::Zero());
  EXPECT_THROW(sample_anchors(pts, AnchorAmount::count(6), 0), DomainError);
  EXPECT_THROW(sample_anchors(pts, AnchorAmount::count(0), 0), DomainError);
  EXPECT_THROW(sample_anchors(pts, AnchorAmount::fraction(0.05), 0), DomainError);
  EXPECT_THROW(sample_anchors(pts, AnchorAmount::fraction(1.5), 0), DomainError);
  EXPECT_THROW(sample_anchors(std::vector<V>{}, AnchorAmount::fraction(1.0), 0), DomainError);
}

TEST(AssignTiles, NearestAndTieToLowerIndex) {
  const std::vector<V> anchors{V(0, 0, 0), V(10, 0, 0)};
  const auto bank = assign_tiles(at_positions({V(1, 0, 0), V(5, 0, 0), V(9, 0, 0)}), anchors);
  EXPECT_EQ(bank.assignment, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(bank.tile_sizes, (std::vector<std::size_t>{2, 1}));
}

TEST(AssignTiles, SingleAnchorTakesEverything) {
  std::mt19937 rng(5);
  const auto bank = assign_tiles(at_positions(random_points(rng, 30, 2.0)), {V(0.3, 0.1, 0)});
  EXPECT_EQ(bank.tile_sizes, std::vector<std::size_t>{30});
  EXPECT_TRUE(std::all_of(bank.assignment.begin(), bank.assignment.end(), [](int m) { return m == 0; }));
}

TEST(AssignTiles, PartitionCoversEveryPrimitive) {
  std::mt19937 rng(6);
  const auto pts = random_points(rng, 500, 1.0);
  const auto bank = assign_tiles(at_positions(pts), random_points(rng, 40, 1.0));
  std::size_t total = 0;
  for (auto n : bank.tile_sizes)
    total += n;
  EXPECT_EQ(total, pts.size());
  std::vector<int> seen(pts.size(), 0);
  for (const auto &tile : bank.members())
    for (auto i : tile)
      ++seen[i];
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST(AssignTiles, GridMatchesBruteForceIncludingTies) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const bool lattice = trial % 2 == 0;
    const int m = 1 + trial % 97;
    const auto anchors = lattice ? lattice_points(rng, m, 3) : random_points(rng, m, 1.0);
    // Queries include points well outside the anchor box.
    const auto pts = lattice ? lattice_points(rng, 300, 6) : random_points(rng, 300, 2.5);
    EXPECT_EQ(nearest_anchor(pts, anchors), oracle(pts, anchors)) << "trial " << trial;
    EXPECT_EQ(nearest_anchor_brute_force(pts, anchors), oracle(pts, anchors)) << "trial " << trial;
  }
}

TEST(AssignTiles, DuplicateAnchorsResolveToFirst) {
  const std::vector<V> anchors(40, V(1, 1, 1));
  const auto got = nearest_anchor(std::vector<V>{V(0, 0, 0), V(2, 2, 2)}, anchors);
  EXPECT_EQ(got, (std::vector<int>{0, 0}));
}

TEST(AssignTiles, ThreadCountDoesNotMatter) {
  std::mt19937 rng(8);
  const auto pts = random_points(rng, 2000, 1.0);
  const auto anchors = random_points(rng, 150, 1.0);
  EXPECT_EQ(nearest_anchor(pts, anchors, 1), nearest_anchor(pts, anchors, 4));
}

TEST(AssignTiles, InvariantUnderRigidMotion) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = random_points(rng, 400, 1.0);
    const auto anchors = random_points(rng, 60, 1.0);
    const Eigen::Quaterniond q = Eigen::Quaterniond::UnitRandom();
    const V t = random_points(rng, 1, 5.0).front();
    std::vector<V> pts2, anchors2;
    for (const auto &p : pts)
      pts2.push_back(q * p + t);
    for (const auto &a : anchors)
      anchors2.push_back(q * a + t);
    EXPECT_EQ(nearest_anchor(pts, anchors), nearest_anchor(pts2, anchors2));
  }
}

TEST(FinetuneAnchors, MovesAgainstMeanMemberGradient) {
  AnchorBank<double> bank;
  bank.anchors = {V(0, 0, 0), V(5, 0, 0), V(9, 9, 9)};
  bank.assignment = {0, 0, 1};
  bank.tile_sizes = {2, 1, 0};
  const auto moved = finetune_anchors(bank, {V(1, 0, 0), V(3, 2, 0), V(0, 0, -4)}, 0.5);
  EXPECT_EQ(moved[0], V(-1, -0.5, 0));
  EXPECT_EQ(moved[1], V(5, 0, 2));
  EXPECT_EQ(moved[2], V(9, 9, 9));
  EXPECT_THROW(finetune_anchors(bank, {V::Zero()}, 0.5), ShapeError);
}

} // namespace
} // namespace gsproto
