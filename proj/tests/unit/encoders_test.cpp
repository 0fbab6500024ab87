#include "test_support.hpp"

using namespace cocobm;

namespace {

SyntheticTextEncoder small_encoder() { return SyntheticTextEncoder({12, 10, 4, 0.35, 1.0}); }

}  // namespace

TEST(SyntheticText, EncodingIsUnitNorm) {
  auto enc = small_encoder();
  for (const char* t : {"red fur", "a long curved beak", "x"}) EXPECT_NEAR(enc.encode_text(t).norm(), 1.0, 1e-12);
}

TEST(SyntheticText, EncodingRecomputesFromProjectionAndMeanToken) {
  auto enc = small_encoder();
  Vector mean = (enc.token_embedding("long") + enc.token_embedding("curved") + enc.token_embedding("beak")) / 3.0;
  Vector want = enc.projection() * mean;
  want /= want.norm();
  EXPECT_LT((enc.encode_text("Long, curved BEAK") - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SyntheticText, WordOrderDoesNotMatter) {
  auto enc = small_encoder();
  EXPECT_LT((enc.encode_text("red fur coat") - enc.encode_text("coat fur red")).norm(), 1e-12);
  EXPECT_GT((enc.encode_text("red fur coat") - enc.encode_text("blue fur coat")).norm(), 1e-3);
}

TEST(SyntheticText, SeedChangesTheSpace) {
  SyntheticTextEncoder a({12, 10, 1, 0.35, 1.0}), b({12, 10, 2, 0.35, 1.0});
  EXPECT_GT((a.encode_text("red fur") - b.encode_text("red fur")).norm(), 1e-3);
}

TEST(SyntheticText, EmptyTextIsAnError) {
  auto enc = small_encoder();
  EXPECT_THROW(enc.tokenize(""), Error);
  EXPECT_THROW(enc.tokenize(" ,;. "), Error);
}

TEST(SyntheticText, RejectsBadConfig) {
  EXPECT_THROW(SyntheticTextEncoder({0, 4, 0, 0.0, 1.0}), Error);
  EXPECT_THROW(SyntheticTextEncoder({4, 4, 0, 0.0, 0.0}), Error);
}

TEST(SyntheticText, BackwardMatchesFiniteDifferences) {
  auto enc = small_encoder();
  TokenSequence seq = enc.tokenize("pale grey feathers");
  Vector g = fixtures::vec({0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.0, 0.2, -0.1, 0.6, -0.3, 0.25});
  Matrix analytic = enc.backward(seq, g);
  const double h = 1e-6;
  for (Eigen::Index r = 0; r < seq.embeddings.rows(); ++r)
    for (Eigen::Index c = 0; c < seq.embeddings.cols(); ++c) {
      TokenSequence p = seq, m = seq;
      p.embeddings(r, c) += h;
      m.embeddings(r, c) -= h;
      double numeric = (g.dot(enc.encode(p)) - g.dot(enc.encode(m))) / (2 * h);
      EXPECT_NEAR(analytic(r, c), numeric, 1e-6 + 1e-4 * std::abs(numeric));
    }
}

TEST(TokenSequences, LearnablePositionsMustBeAPrefix) {
  TokenSequence s;
  s.embeddings = Matrix::Zero(2, 3);
  s.kinds = {TokenKind::fixed, TokenKind::learnable};
  EXPECT_THROW(s.validate(), Error);
  s.kinds = {TokenKind::learnable, TokenKind::fixed};
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.num_learnable(), 1u);
  s.kinds = {TokenKind::fixed};
  EXPECT_THROW(s.validate(), Error);
}

TEST(TokenSequences, ConcatKeepsOrderAndFlags) {
  auto enc = small_encoder();
  auto a = enc.tokenize("red"), b = enc.tokenize("fur coat");
  auto ab = concat(a, b);
  EXPECT_EQ(ab.size(), 3u);
  EXPECT_EQ(ab.embeddings.row(0), a.embeddings.row(0));
  EXPECT_EQ(ab.embeddings.row(2), b.embeddings.row(1));
}

TEST(FeatureImages, NormalizesAndChecksDimension) {
  FeatureImageEncoder enc(3);
  ImageRef ok{"a", {}, fixtures::vec({3, 0, 4})};
  EXPECT_LT((enc.encode(ok) - fixtures::vec({0.6, 0, 0.8})).norm(), 1e-12);
  ImageRef bad{"b", {}, fixtures::vec({1, 2})};
  EXPECT_THROW(enc.encode(bad), Error);
}

TEST(FeatureImages, ReadsFeatureFilesAndReportsUnreadable) {
  fixtures::TempDir dir;
  write_text_file(dir / "x.txt", "1 2\n2\n");
  FeatureImageEncoder enc(3);
  EXPECT_NEAR(enc.encode({"x", dir / "x.txt", std::nullopt}).norm(), 1.0, 1e-12);
  write_text_file(dir / "bad.txt", "1 two 3");
  EXPECT_THROW(enc.encode({"bad", dir / "bad.txt", std::nullopt}), Error);
  try {
    enc.encode({"gone", dir / "gone.txt", std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cannot read image"), std::string::npos);
  }
}
