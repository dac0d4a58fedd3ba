#include <gtest/gtest.h>

#include <cmath>

#include "afp/codec.hpp"
#include "oracles.hpp"

namespace afp {
namespace {

TEST(Encode, Identity) {
  const auto d = codec::encode({8, 8, 24, 24}, {16, 16}, 16);
  EXPECT_EQ(d.dcx, 0.0);
  EXPECT_EQ(d.dcy, 0.0);
  EXPECT_EQ(d.dw, 0.0);
  EXPECT_EQ(d.dh, 0.0);
}

TEST(Encode, Example) {
  const auto d = codec::encode({10, 10, 42, 42}, {24, 28}, 16);
  EXPECT_NEAR(d.dcx, 0.125, 1e-12);
  EXPECT_NEAR(d.dcy, -0.125, 1e-12);
  EXPECT_NEAR(d.dw, 0.693147180559945, 1e-12);
  EXPECT_NEAR(d.dh, 0.693147180559945, 1e-12);
}

TEST(Encode, DoublingStride) {
  const Box b{3, 7, 50, 29};
  const Point p{20, 12};
  const auto a = codec::encode(b, p, 8);
  const auto c = codec::encode(b, p, 16);
  EXPECT_NEAR(c.dcx, a.dcx / 2, 1e-12);
  EXPECT_NEAR(c.dcy, a.dcy / 2, 1e-12);
  EXPECT_NEAR(c.dw, a.dw - std::log(2.0), 1e-12);
  EXPECT_NEAR(c.dh, a.dh - std::log(2.0), 1e-12);
}

TEST(Encode, Errors) {
  EXPECT_THROW(codec::encode({5, 5, 5, 9}, {0, 0}, 4), Error);
  EXPECT_THROW(codec::encode({5, 5, 9, 4}, {0, 0}, 4), Error);
  EXPECT_THROW(codec::encode({5, 5, 9, 9}, {0, 0}, 0), Error);
}

TEST(Decode, ZeroDelta) {
  const Box b = codec::decode({}, {24, 28}, 16);
  EXPECT_EQ(b, (Box{16, 20, 32, 36}));
}

TEST(Decode, RoundTrip) {
  const Box gt{10, 10, 42, 42};
  const Box b = codec::decode(codec::encode(gt, {24, 28}, 16), {24, 28}, 16);
  EXPECT_NEAR(b.x1, 10, 1e-9);
  EXPECT_NEAR(b.y1, 10, 1e-9);
  EXPECT_NEAR(b.x2, 42, 1e-9);
  EXPECT_NEAR(b.y2, 42, 1e-9);
}

TEST(Decode, RandomRoundTrip) {
  Rng rng(1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double w = rng.uniform(0.5, 200), h = rng.uniform(0.5, 200);
    const double x = rng.uniform(-50, 300), y = rng.uniform(-50, 300);
    const Box gt{x, y, x + w, y + h};
    const Point p{rng.uniform(0, 256), rng.uniform(0, 256)};
    const double stride = 1 << rng.uniform_int(0, 7);
    const Box b = codec::decode(codec::encode(gt, p, stride), p, stride);
    worst = std::max({worst, std::fabs(b.x1 - gt.x1), std::fabs(b.y1 - gt.y1),
                      std::fabs(b.x2 - gt.x2), std::fabs(b.y2 - gt.y2)});
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Iou, Values) {
  const Box a{0, 0, 2, 2};
  EXPECT_EQ(codec::iou(a, a), 1.0);
  EXPECT_EQ(codec::iou(a, {3, 3, 4, 4}), 0.0);
  EXPECT_EQ(codec::iou(a, {2, 0, 4, 2}), 0.0);
  EXPECT_NEAR(codec::iou(a, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  EXPECT_EQ(codec::iou(a, {1, 1, 1, 3}), 0.0);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto d = oracle::random_detections(rng, 2, 50);
    const double v = codec::iou(d[0].box, d[1].box);
    EXPECT_EQ(v, codec::iou(d[1].box, d[0].box));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, oracle::iou(d[0].box, d[1].box), 1e-12);
  }
}

TEST(Nms, Examples) {
  const std::vector<Detection> one{{{0, 0, 1, 1}, 0.3, 0}};
  EXPECT_EQ(codec::nms(one, 0.1), one);
  const Detection a{{0, 0, 10, 10}, 0.9, 0};
  const Detection b{{0, 0, 10, 12}, 0.8, 0};
  const Detection c{{20, 20, 30, 30}, 0.5, 0};
  EXPECT_NEAR(codec::iou(a.box, b.box), 100.0 / 120.0, 1e-12);
  const std::vector<Detection> dets{c, b, a};
  EXPECT_EQ(codec::nms(dets, 0.1), (std::vector<Detection>{a, c}));
  EXPECT_TRUE(codec::nms({}, 0.1).empty());
}

TEST(Nms, TieBreak) {
  const Detection a{{1, 0, 5, 5}, 0.5, 0};
  const Detection b{{0, 0, 5, 5}, 0.5, 0};
  EXPECT_TRUE(codec::score_order(b, a));
  const std::vector<Detection> dets{a, b};
  EXPECT_EQ(codec::nms(dets, 0.1), (std::vector<Detection>{b}));
}

TEST(Nms, MatchesReference) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dets = oracle::random_detections(rng, 1000, 300);
    const double thresh = trial % 2 ? 0.1 : rng.uniform(0.0, 1.0);
    const auto got = codec::nms(dets, thresh);
    EXPECT_EQ(got, oracle::nms(dets, thresh));
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j)
        EXPECT_LE(codec::iou(got[i].box, got[j].box), thresh);
    EXPECT_EQ(codec::nms(got, thresh), got);
  }
}

}  // namespace
}  // namespace afp
