#pragma once
// Conditional concept bottleneck model.
//
// Every (label j, concept k) pair gets its own text prompt
//   [t_1 .. t_q] [tokens of label j] [tokens of concept k]
// where t_1..t_q are learnable condition tokens shared by all pairs. The
// concept score of an image x under label j is x . T(prompt_jk), giving an
// N x M score matrix per sample. Pairs marked in the editable matrix are
// clamped to min(score, 0). Label j's logit reads only row j:
//   z_j = logit_scale * W[j,:] . scores[j,:] + bias_j.
// Training minimises the positively weighted one-vs-rest BCE over labels.

#include "cocobm/adam.hpp"
#include "cocobm/bank.hpp"
#include "cocobm/dataset.hpp"
#include "cocobm/encoders.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace cocobm {

struct ConditionTokens {
  Matrix tokens;  // q x token_dim

  std::size_t q() const { return static_cast<std::size_t>(tokens.rows()); }

  static ConditionTokens init(std::size_t q, std::size_t token_dim, std::uint64_t seed, double stddev = 0.02) {
    if (q == 0) throw Error("condition tokens: q must be at least 1");
    Rng rng = make_rng(seed, "cocobm/condition_tokens");
    Gaussian g(rng);
    ConditionTokens c;
    c.tokens.resize(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(token_dim));
    for (Eigen::Index r = 0; r < c.tokens.rows(); ++r)
      for (Eigen::Index k = 0; k < c.tokens.cols(); ++k) c.tokens(r, k) = g() * stddev;
    return c;
  }
};

// label: the prompt carries the label tokens. label_free drops them, which
// makes every row of the score matrix identical (the shared-score CBM).
enum class Conditioning { label, label_free };

inline TokenSequence condition_sequence(const ConditionTokens& cond) {
  TokenSequence seq;
  seq.embeddings = cond.tokens;
  seq.kinds.assign(cond.q(), TokenKind::learnable);
  return seq;
}

inline TokenSequence build_prompt(const TokenSequence& label_tokens, const TokenSequence& concept_tokens,
                                  const ConditionTokens& cond, Conditioning mode = Conditioning::label) {
  TokenSequence seq = condition_sequence(cond);
  if (mode == Conditioning::label) seq = concat(seq, label_tokens);
  return concat(seq, concept_tokens);
}

inline TokenSequence build_prompt(const TextEncoder& encoder, std::string_view label, std::string_view concept_text,
                                  const ConditionTokens& cond, Conditioning mode = Conditioning::label) {
  return build_prompt(encoder.tokenize(label), encoder.tokenize(concept_text), cond, mode);
}

// Raw conditional scores: table rows are T(prompt_jk) at index j*M + k.
inline Matrix raw_scores(const Matrix& table, std::size_t n_labels, std::size_t n_concepts, const Vector& image) {
  Vector flat = table * image;
  Matrix s(static_cast<Eigen::Index>(n_labels), static_cast<Eigen::Index>(n_concepts));
  for (std::size_t j = 0; j < n_labels; ++j)
    for (std::size_t k = 0; k < n_concepts; ++k) s(j, k) = flat(static_cast<Eigen::Index>(j * n_concepts + k));
  return s;
}

// min(score, 0) wherever the editable matrix marks the pair.
inline void apply_editable_matrix(Matrix& scores, const EditableMatrix& e) {
  if (static_cast<std::size_t>(scores.rows()) != e.rows() || static_cast<std::size_t>(scores.cols()) != e.cols())
    throw Error("editable matrix shape (" + std::to_string(e.rows()) + ", " + std::to_string(e.cols()) +
                ") does not match score shape (" + std::to_string(scores.rows()) + ", " +
                std::to_string(scores.cols()) + ")");
  for (Eigen::Index j = 0; j < scores.rows(); ++j)
    for (Eigen::Index k = 0; k < scores.cols(); ++k)
      if (e.entries(j, k) && scores(j, k) > 0.0) scores(j, k) = 0.0;
}

inline Vector aggregate(const Matrix& scores, const Matrix& weights, const Vector& bias, double logit_scale = 1.0) {
  if (scores.rows() != weights.rows() || scores.cols() != weights.cols() || bias.size() != scores.rows())
    throw Error("aggregate: shape mismatch");
  Vector z(scores.rows());
  for (Eigen::Index j = 0; j < scores.rows(); ++j) z(j) = logit_scale * scores.row(j).dot(weights.row(j)) + bias(j);
  return z;
}

// Shared-score CBM: one score per concept, s_k = x . T(c_k).
inline Vector score_sample_shared(const Vector& image, const std::vector<Vector>& concept_embeddings) {
  Vector s(static_cast<Eigen::Index>(concept_embeddings.size()));
  for (std::size_t k = 0; k < concept_embeddings.size(); ++k) s(static_cast<Eigen::Index>(k)) = image.dot(concept_embeddings[k]);
  return s;
}

inline Vector aggregate_shared(const Vector& shared_scores, const Matrix& weights, const Vector& bias,
                               double logit_scale = 1.0) {
  return logit_scale * (weights * shared_scores) + bias;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Mean over labels of -[w_p y_j log s(z_j) + (1 - y_j) log(1 - s(z_j))], y one-hot.
inline double bce_loss(const Vector& logits, std::size_t true_label, double pos_weight) {
  if (!logits.allFinite()) throw Error("loss: non-finite logits");
  if (true_label >= static_cast<std::size_t>(logits.size())) throw Error("loss: label index out of range");
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    // log s(z) = -softplus(-z); log(1 - s(z)) = -softplus(z)
    total += static_cast<std::size_t>(j) == true_label ? pos_weight * softplus(-logits(j)) : softplus(logits(j));
  }
  return total / static_cast<double>(logits.size());
}

inline Vector bce_loss_grad(const Vector& logits, std::size_t true_label, double pos_weight) {
  Vector g(logits.size());
  const double n = static_cast<double>(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    double p = sigmoid(logits(j));
    g(j) = static_cast<std::size_t>(j) == true_label ? -pos_weight * (1.0 - p) / n : p / n;
  }
  return g;
}

inline std::size_t argmax_lowest(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  return best;
}

struct ModelConfig {
  std::size_t q = 8;
  double init_std = 0.02;
  Conditioning conditioning = Conditioning::label;
  double logit_scale = 1.0;
  double pos_weight = 0.0;  // 0 selects N
  std::uint64_t seed = 0;
  // Sees every clamped score matrix the model produces, in training and
  // inference. Used for auditing.
  std::function<void(const Matrix& clamped, const EditableMatrix&)> score_hook;
};

class CocoModel {
 public:
  struct Gradient {
    Matrix condition;
    Matrix weights;
    Vector bias;
    double loss = 0.0;
  };

  CocoModel(const TextEncoder& encoder, std::vector<std::string> labels, std::vector<std::string> concepts,
            EditableMatrix editable, ModelConfig cfg = {})
      : encoder_(&encoder), labels_(std::move(labels)), concepts_(std::move(concepts)),
        editable_(std::move(editable)), cfg_(cfg) {
    if (labels_.empty()) throw Error("model needs at least one label");
    if (editable_.rows() != labels_.size() || editable_.cols() != concepts_.size())
      throw Error("editable matrix shape (" + std::to_string(editable_.rows()) + ", " +
                  std::to_string(editable_.cols()) + ") does not match bank (" + std::to_string(labels_.size()) +
                  ", " + std::to_string(concepts_.size()) + ")");
    for (const auto& l : labels_) label_tokens_.push_back(encoder_->tokenize(l));
    for (const auto& c : concepts_) concept_tokens_.push_back(encoder_->tokenize(c));
    weights_ = Matrix::Zero(static_cast<Eigen::Index>(n_labels()), static_cast<Eigen::Index>(n_concepts()));
    bias_ = Vector::Zero(static_cast<Eigen::Index>(n_labels()));
    set_condition_tokens(ConditionTokens::init(cfg_.q, encoder_->token_dim(), cfg_.seed, cfg_.init_std));
  }

  static CocoModel for_bank(const TextEncoder& encoder, const ConceptBank& bank, EditableMatrix editable,
                            ModelConfig cfg = {}) {
    return CocoModel(encoder, bank.label_names(), bank.concept_texts(), std::move(editable), cfg);
  }

  std::size_t n_labels() const { return labels_.size(); }
  std::size_t n_concepts() const { return concepts_.size(); }
  const ModelConfig& config() const { return cfg_; }
  const EditableMatrix& editable() const { return editable_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& concepts() const { return concepts_; }
  double pos_weight() const { return cfg_.pos_weight > 0.0 ? cfg_.pos_weight : static_cast<double>(n_labels()); }

  const ConditionTokens& condition() const { return cond_; }
  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }
  const Matrix& text_table() const { return table_; }

  void set_condition_tokens(ConditionTokens cond) {
    if (static_cast<std::size_t>(cond.tokens.cols()) != encoder_->token_dim())
      throw Error("condition tokens width does not match the text encoder");
    cond_ = std::move(cond);
    rebuild_table();
  }
  void set_weights(Matrix w) {
    if (w.rows() != weights_.rows() || w.cols() != weights_.cols()) throw Error("weights: shape mismatch");
    weights_ = std::move(w);
  }
  void set_bias(Vector b) {
    if (b.size() != bias_.size()) throw Error("bias: shape mismatch");
    bias_ = std::move(b);
  }

  TokenSequence prompt(std::size_t j, std::size_t k) const {
    return build_prompt(label_tokens_[j], concept_tokens_[k], cond_, cfg_.conditioning);
  }

  Matrix raw(const Vector& image) const { return raw_scores(table_, n_labels(), n_concepts(), image); }

  // Clamped N x M score matrix. Clamping applies in training and inference.
  Matrix scores(const Vector& image) const {
    Matrix s = raw(image);
    apply_editable_matrix(s, editable_);
    if (cfg_.score_hook) cfg_.score_hook(s, editable_);
    return s;
  }

  // Per-pair contributions to the label logits: logit_scale * W[j,k] * scores[j,k].
  Matrix contributions(const Vector& image) const {
    return cfg_.logit_scale * weights_.cwiseProduct(scores(image));
  }

  Vector logits(const Vector& image) const { return aggregate(scores(image), weights_, bias_, cfg_.logit_scale); }
  std::size_t predict(const Vector& image) const { return argmax_lowest(logits(image)); }

  double loss(const Dataset& data) const {
    if (data.empty()) throw Error("loss: empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += bce_loss(logits(data.images[i]), data.targets[i], pos_weight());
    return total / static_cast<double>(data.size());
  }

  double accuracy(const Dataset& data) const {
    if (data.empty()) throw Error("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hits += predict(data.images[i]) == data.targets[i];
    return static_cast<double>(hits) / static_cast<double>(data.size());
  }

  // Analytic gradient of the mean loss over `batch` (indices into data).
  // Clamped entries pass no gradient to the text side.
  Gradient gradient(const Dataset& data, std::span<const std::size_t> batch) const {
    const auto N = static_cast<Eigen::Index>(n_labels());
    const auto M = static_cast<Eigen::Index>(n_concepts());
    const auto d = static_cast<Eigen::Index>(encoder_->dim());
    Gradient g;
    g.weights = Matrix::Zero(N, M);
    g.bias = Vector::Zero(N);
    g.condition = Matrix::Zero(cond_.tokens.rows(), cond_.tokens.cols());
    Matrix grad_table = Matrix::Zero(N * M, d);  // d(loss)/d(T_jk)
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (auto i : batch) {
      const Vector& x = data.images[i];
      Matrix r = raw(x);
      Matrix s = r;
      apply_editable_matrix(s, editable_);
      if (cfg_.score_hook) cfg_.score_hook(s, editable_);
      Vector z = aggregate(s, weights_, bias_, cfg_.logit_scale);
      g.loss += bce_loss(z, data.targets[i], pos_weight()) * inv_b;
      Vector gz = bce_loss_grad(z, data.targets[i], pos_weight()) * inv_b;
      for (Eigen::Index j = 0; j < N; ++j) {
        g.bias(j) += gz(j);
        g.weights.row(j) += cfg_.logit_scale * gz(j) * s.row(j);
        for (Eigen::Index k = 0; k < M; ++k) {
          if (editable_.entries(j, k) && r(j, k) > 0.0) continue;
          double gs = cfg_.logit_scale * gz(j) * weights_(j, k);
          if (gs != 0.0) grad_table.row(j * M + k) += gs * x.transpose();
        }
      }
    }
    const auto q = static_cast<Eigen::Index>(cond_.q());
    for (Eigen::Index j = 0; j < N; ++j) {
      for (Eigen::Index k = 0; k < M; ++k) {
        Vector gt = grad_table.row(j * M + k).transpose();
        if (gt.isZero(0.0)) continue;
        Matrix tok_grad = encoder_->backward(prompt(static_cast<std::size_t>(j), static_cast<std::size_t>(k)), gt);
        g.condition += tok_grad.topRows(q);
      }
    }
    return g;
  }

 private:
  void rebuild_table() {
    const auto N = n_labels(), M = n_concepts();
    table_.resize(static_cast<Eigen::Index>(N * M), static_cast<Eigen::Index>(encoder_->dim()));
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < M; ++k)
        table_.row(static_cast<Eigen::Index>(j * M + k)) = encoder_->encode(prompt(j, k)).transpose();
  }

  const TextEncoder* encoder_;
  std::vector<std::string> labels_;
  std::vector<std::string> concepts_;
  std::vector<TokenSequence> label_tokens_;
  std::vector<TokenSequence> concept_tokens_;
  EditableMatrix editable_;
  ModelConfig cfg_;
  ConditionTokens cond_;
  Matrix weights_;
  Vector bias_;
  Matrix table_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 20;  // epochs without validation-loss improvement; 0 disables
  double learning_rate = 0.01;
  std::size_t batch_size = 2048;
  std::uint64_t seed = 0;
};

struct TrainMetrics {
  std::vector<double> train_loss;  // after each epoch; index 0 is the initial loss
  std::vector<double> val_loss;
  double val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<Matrix> val_scores;  // clamped N x M per validation sample, best parameters
};

// Adam on condition tokens, W and bias; encoders stay frozen. Keeps the
// parameters with the lowest validation loss.
inline TrainMetrics train(CocoModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw Error("train: empty training split");
  if (val_set.empty()) throw Error("train: empty validation split");
  if (cfg.batch_size == 0) throw Error("train: batch size must be positive");
  Adam<Matrix> opt_cond(cfg.learning_rate), opt_w(cfg.learning_rate);
  Adam<Vector> opt_b(cfg.learning_rate);
  Rng rng = make_rng(cfg.seed, "cocobm/batches");

  TrainMetrics m;
  m.train_loss.push_back(model.loss(train_set));
  m.val_loss.push_back(model.loss(val_set));
  ConditionTokens best_cond = model.condition();
  Matrix best_w = model.weights();
  Vector best_b = model.bias();
  double best_val = m.val_loss.back();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grad = model.gradient(train_set, std::span<const std::size_t>(order.data() + start, end - start));
      ConditionTokens cond = model.condition();
      opt_cond.step(cond.tokens, grad.condition);
      Matrix w = model.weights();
      opt_w.step(w, grad.weights);
      Vector b = model.bias();
      opt_b.step(b, grad.bias);
      model.set_condition_tokens(std::move(cond));
      model.set_weights(std::move(w));
      model.set_bias(std::move(b));
    }
    m.epochs_run = epoch;
    m.train_loss.push_back(model.loss(train_set));
    m.val_loss.push_back(model.loss(val_set));
    if (m.val_loss.back() < best_val) {
      best_val = m.val_loss.back();
      best_cond = model.condition();
      best_w = model.weights();
      best_b = model.bias();
      m.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  model.set_condition_tokens(std::move(best_cond));
  model.set_weights(std::move(best_w));
  model.set_bias(std::move(best_b));
  m.val_accuracy = model.accuracy(val_set);
  for (const auto& x : val_set.images) m.val_scores.push_back(model.scores(x));
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
  Matrix m(static_cast<Eigen::Index>(j.size()),
           j.empty() ? cols_if_empty : static_cast<Eigen::Index>(j.at(0).size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != m.cols()) throw Error("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const json& j) {
  auto vals = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline json checkpoint_json(const CocoModel& model, const ConceptBank& bank) {
  return json{{"q", model.condition().q()},
              {"d_tok", model.condition().tokens.cols()},
              {"condition_tokens", matrix_to_json(model.condition().tokens)},
              {"W", matrix_to_json(model.weights())},
              {"bias", vector_to_json(model.bias())},
              {"conditioning", model.config().conditioning == Conditioning::label ? "label" : "label_free"},
              {"logit_scale", model.config().logit_scale},
              {"bank_version", bank.version},
              {"bank_hash", bank_hash(bank)}};
}

// Restores parameters into `model`; the checkpoint must match `bank`.
inline void load_checkpoint(CocoModel& model, const ConceptBank& bank, const json& ckpt) {
  auto hash = ckpt.at("bank_hash").get<std::string>();
  if (hash != bank_hash(bank))
    throw Error("checkpoint was trained against bank hash " + hash + " (version " +
                std::to_string(ckpt.value("bank_version", -1)) + "), but the supplied bank v" +
                std::to_string(bank.version) + " hashes to " + bank_hash(bank));
  ConditionTokens cond;
  cond.tokens = matrix_from_json(ckpt.at("condition_tokens"));
  if (cond.q() != ckpt.at("q").get<std::size_t>()) throw Error("checkpoint: q does not match token matrix");
  model.set_condition_tokens(std::move(cond));
  model.set_weights(matrix_from_json(ckpt.at("W"), static_cast<Eigen::Index>(bank.num_concepts())));
  model.set_bias(vector_from_json(ckpt.at("bias")));
}

}  // namespace cocobm
