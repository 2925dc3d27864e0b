#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mkg/error.hpp"
#include "mkg/eval.hpp"
#include "mkg/features.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/kge.hpp"
#include "mkg/linalg.hpp"
#include "mkg/optim.hpp"
#include "mkg/random.hpp"

namespace mkg {

// Entity rows are [topology embedding ; projected feature embedding]. The
// relation rows keep the topology model's width and only enter the scorer
// through the concatenation [z_u * z_v ; z_e].
struct FusedEmbeddingTable {
  Matrix entity;
  Matrix relation;
  std::size_t topology_width = 0;
  std::size_t feature_width = 0;

  std::size_t width() const { return topology_width + feature_width; }
  std::size_t relation_width() const { return static_cast<std::size_t>(relation.cols()); }
  std::size_t scorer_input_width() const { return width() + relation_width(); }
};

inline FusedEmbeddingTable fuse_embeddings(const EmbeddingTable& topology, const Matrix& features) {
  if (topology.entity.rows() != features.rows()) {
    throw ShapeError("topology has " + std::to_string(topology.entity.rows()) + " rows, features have " +
                     std::to_string(features.rows()));
  }
  FusedEmbeddingTable f;
  f.topology_width = static_cast<std::size_t>(topology.entity.cols());
  f.feature_width = static_cast<std::size_t>(features.cols());
  f.entity.resize(topology.entity.rows(), static_cast<Eigen::Index>(f.width()));
  f.entity.leftCols(topology.entity.cols()) = topology.entity;
  f.entity.rightCols(features.cols()) = features;
  f.relation = topology.relation;
  return f;
}

// Two-layer scorer g(u, e, v) = sigmoid(w2 . relu(W1 [z_u * z_v ; z_e] + b1) + b2).
struct ScorerParams {
  Matrix w1;        // hidden x input
  Vector b1;        // hidden
  Vector w2;        // hidden
  double b2 = 0.0;
  bool use_bias = true;

  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t input_width() const { return static_cast<std::size_t>(w1.cols()); }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
inline ScorerParams init_scorer(std::size_t input_width, std::size_t hidden, bool use_bias, std::uint64_t seed) {
  ScorerParams p;
  p.use_bias = use_bias;
  p.w1.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(input_width));
  p.b1 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  p.w2.resize(static_cast<Eigen::Index>(hidden));
  Rng rng(derive_seed(seed, 0x53434F5245ull));
  const double a1 = 1.0 / std::sqrt(static_cast<double>(input_width));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.uniform(-a1, a1);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2(i) = rng.uniform(-a2, a2);
  if (use_bias) {
    for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = rng.uniform(-a1, a1);
    p.b2 = rng.uniform(-a2, a2);
  }
  return p;
}

inline ScorerParams zero_scorer(std::size_t input_width, std::size_t hidden, bool use_bias = true) {
  ScorerParams p;
  p.use_bias = use_bias;
  p.w1 = Matrix::Zero(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(input_width));
  p.b1 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  p.w2 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  return p;
}

// Pre-sigmoid output of g.
inline double logit_g(const ScorerParams& p, std::span<const double> zu, std::span<const double> ze,
                      std::span<const double> zv) {
  if (zu.size() != zv.size() || zu.size() + ze.size() != p.input_width()) {
    throw ShapeError("scorer expects [" + std::to_string(zu.size()) + " node ; " + std::to_string(ze.size()) +
                     " relation] to total " + std::to_string(p.input_width()));
  }
  Vector x(static_cast<Eigen::Index>(p.input_width()));
  for (std::size_t i = 0; i < zu.size(); ++i) x(static_cast<Eigen::Index>(i)) = zu[i] * zv[i];
  for (std::size_t i = 0; i < ze.size(); ++i) x(static_cast<Eigen::Index>(zu.size() + i)) = ze[i];
  Vector h = p.w1 * x;
  if (p.use_bias) h += p.b1;
  h = h.cwiseMax(0.0);
  return p.w2.dot(h) + (p.use_bias ? p.b2 : 0.0);
}

inline double score_g(const ScorerParams& p, std::span<const double> zu, std::span<const double> ze,
                      std::span<const double> zv) {
  return sigmoid(logit_g(p, zu, ze, zv));
}

// ---------------------------------------------------------------------------
// Negative sampling

struct NegativeStrategy {
  enum class Kind { Random, Biased };
  Kind kind = Kind::Random;
  double tau = 0.3;            // Jaccard threshold for biased candidates
  bool same_type = true;       // candidates share the anchor's component type
  bool same_machine = false;   // candidates also share a machine configuration

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("strategy.tau must lie in [0, 1]");
  }
};

inline std::string_view to_string(NegativeStrategy::Kind k) {
  return k == NegativeStrategy::Kind::Random ? "random" : "biased";
}

inline NegativeStrategy::Kind parse_strategy(std::string_view s) {
  if (s == "random") return NegativeStrategy::Kind::Random;
  if (s == "biased") return NegativeStrategy::Kind::Biased;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (expected random or biased)");
}

// Bitset of machine configurations (connectedTo roots) containing each node.
inline std::vector<std::vector<std::uint64_t>> machine_membership(const MachineKnowledgeGraph& graph) {
  const std::size_t n = graph.node_count();
  std::vector<std::size_t> indeg(n, 0);
  for (NodeIndex v = 0; v < n; ++v) indeg[v] = graph.in(RelationKind::ConnectedTo, v).size();
  std::vector<NodeIndex> roots;
  for (NodeIndex v = 0; v < n; ++v) {
    if (indeg[v] == 0) roots.push_back(v);
  }
  const std::size_t words = (roots.size() + 63) / 64;
  std::vector<std::vector<std::uint64_t>> bits(n, std::vector<std::uint64_t>(words, 0));
  std::vector<NodeIndex> queue;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    bits[roots[i]][i / 64] |= std::uint64_t{1} << (i % 64);
    queue.push_back(roots[i]);
  }
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const NodeIndex v = queue[head];
    for (NodeIndex c : graph.out(RelationKind::ConnectedTo, v)) {
      for (std::size_t w = 0; w < words; ++w) bits[c][w] |= bits[v][w];
      if (--indeg[c] == 0) queue.push_back(c);
    }
  }
  return bits;
}

struct BiasedCandidates {
  std::vector<std::vector<NodeIndex>> lists;  // per node; empty means fall back to random
  std::vector<char> anchored;                 // node appears in a positive triple

  std::size_t anchored_count() const { return static_cast<std::size_t>(std::count(anchored.begin(), anchored.end(), 1)); }
  std::size_t fallback_count() const {
    std::size_t n = 0;
    for (std::size_t v = 0; v < lists.size(); ++v) n += anchored[v] && lists[v].empty();
    return n;
  }
};

// For every node of a positive triple: same-type nodes whose metadata Jaccard
// to it is below tau, minus itself and its known substitutes, in index order.
inline BiasedCandidates build_biased_candidates(const MachineKnowledgeGraph& graph, std::span<const Triple> positives,
                                                const NegativeStrategy& strategy) {
  strategy.validate();
  const std::size_t n = graph.node_count();
  BiasedCandidates out;
  out.lists.resize(n);
  out.anchored.assign(n, 0);
  std::vector<std::unordered_set<NodeIndex>> substitutes(n);
  for (const Triple& t : positives) {
    out.anchored[t.head] = 1;
    out.anchored[t.tail] = 1;
    substitutes[t.head].insert(t.tail);
    substitutes[t.tail].insert(t.head);
  }
  const TypeLabels labels = type_labels(graph);
  std::vector<std::vector<NodeIndex>> by_type(labels.classes.size());
  for (NodeIndex v = 0; v < n; ++v) by_type[labels.label[v]].push_back(v);
  std::vector<AttributeSet> attrs(n);
  for (NodeIndex v = 0; v < n; ++v) attrs[v] = attribute_set(graph.node(v));
  std::vector<std::vector<std::uint64_t>> machines;
  if (strategy.same_machine) machines = machine_membership(graph);
  auto share_machine = [&](NodeIndex a, NodeIndex b) {
    for (std::size_t w = 0; w < machines[a].size(); ++w) {
      if (machines[a][w] & machines[b][w]) return true;
    }
    return false;
  };

  std::vector<NodeIndex> everyone(n);
  std::iota(everyone.begin(), everyone.end(), NodeIndex{0});
  for (NodeIndex v = 0; v < n; ++v) {
    if (!out.anchored[v]) continue;
    const auto& pool = strategy.same_type ? by_type[labels.label[v]] : everyone;
    for (NodeIndex w : pool) {
      if (w == v || substitutes[v].contains(w)) continue;
      if (strategy.same_machine && !share_machine(v, w)) continue;
      if (jaccard(attrs[v], attrs[w]) < strategy.tau) out.lists[v].push_back(w);
    }
  }
  return out;
}

// K replacement tails for a positive. Random: uniform entities other than the
// head, redrawn while (head, r, tail') is known true. Biased: uniform over the
// true tail's candidate list, falling back to Random when that list is empty.
inline std::vector<NodeIndex> sample_negatives(const Triple& positive, std::size_t k, NegativeStrategy::Kind kind,
                                               const BiasedCandidates* candidates, std::size_t entity_count,
                                               const TripleSet& known, Rng& rng, std::size_t retry_cap = 64) {
  if (entity_count < 2) throw ConfigError("negative sampling needs at least two entities");
  std::vector<NodeIndex> out;
  out.reserve(k);
  const std::vector<NodeIndex>* list = nullptr;
  if (kind == NegativeStrategy::Kind::Biased) {
    if (candidates == nullptr) throw ConfigError("biased sampling needs candidate lists");
    if (positive.tail < candidates->lists.size() && !candidates->lists[positive.tail].empty()) {
      list = &candidates->lists[positive.tail];
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (list != nullptr) {
      out.push_back((*list)[rng.index(list->size())]);
      continue;
    }
    NodeIndex c = 0;
    for (std::size_t attempt = 0; attempt < retry_cap; ++attempt) {
      c = static_cast<NodeIndex>(rng.index(entity_count));
      if (c != positive.head && !known.contains(positive.head, positive.relation, c)) break;
    }
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning loss and gradients

struct FinetuneExample {
  Triple positive;
  std::vector<NodeIndex> negatives;  // replacement tails
};

struct FinetuneGradients {
  Matrix w1;
  Vector b1;
  Vector w2;
  double b2 = 0.0;
  Matrix entity;
  Matrix relation;

  static FinetuneGradients zeros_like(const FusedEmbeddingTable& f, const ScorerParams& p) {
    FinetuneGradients g;
    g.w1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
    g.b1 = Vector::Zero(p.b1.size());
    g.w2 = Vector::Zero(p.w2.size());
    g.entity = Matrix::Zero(f.entity.rows(), f.entity.cols());
    g.relation = Matrix::Zero(f.relation.rows(), f.relation.cols());
    return g;
  }
};

// Mean over examples of  -ln g(u,e,v) - sum_i ln(1 - g(u,e,n_i)),  computed
// from logits. `hidden_mask` (pairs x hidden, pair order: each positive then
// its negatives) applies dropout to the hidden layer; null means no dropout.
// Gradients of that mean are added into `grads` when it is non-null.
inline double finetune_loss(const FusedEmbeddingTable& fused, const ScorerParams& p,
                            std::span<const FinetuneExample> batch, const Matrix* hidden_mask,
                            FinetuneGradients* grads) {
  if (batch.empty()) return 0.0;
  const auto F = static_cast<Eigen::Index>(fused.width());
  const auto R = static_cast<Eigen::Index>(fused.relation_width());
  if (static_cast<std::size_t>(F + R) != p.input_width()) throw ShapeError("scorer input width does not match embeddings");

  Eigen::Index pairs = 0;
  for (const auto& ex : batch) pairs += 1 + static_cast<Eigen::Index>(ex.negatives.size());
  if (hidden_mask != nullptr && (hidden_mask->rows() != pairs || hidden_mask->cols() != p.w1.rows())) {
    throw ShapeError("dropout mask shape does not match the batch");
  }

  struct PairRef {
    NodeIndex u, v;
    Eigen::Index rel;
    bool positive;
  };
  std::vector<PairRef> refs;
  refs.reserve(static_cast<std::size_t>(pairs));
  Matrix x(pairs, F + R);
  for (const auto& ex : batch) {
    const auto rel = static_cast<Eigen::Index>(relation_index(ex.positive.relation));
    auto push = [&](NodeIndex v, bool positive) {
      const auto row = static_cast<Eigen::Index>(refs.size());
      x.row(row).head(F) = fused.entity.row(ex.positive.head).cwiseProduct(fused.entity.row(v));
      x.row(row).tail(R) = fused.relation.row(rel);
      refs.push_back({ex.positive.head, v, rel, positive});
    };
    push(ex.positive.tail, true);
    for (NodeIndex n : ex.negatives) push(n, false);
  }

  Matrix pre = x * p.w1.transpose();
  if (p.use_bias) pre.rowwise() += p.b1.transpose();
  Matrix h = pre.cwiseMax(0.0);
  if (hidden_mask != nullptr) h = h.cwiseProduct(*hidden_mask);
  Vector o = h * p.w2;
  if (p.use_bias) o.array() += p.b2;

  const double weight = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Vector d_o(pairs);
  for (Eigen::Index i = 0; i < pairs; ++i) {
    const bool pos = refs[static_cast<std::size_t>(i)].positive;
    loss += pos ? softplus(-o(i)) : softplus(o(i));
    d_o(i) = weight * (sigmoid(o(i)) - (pos ? 1.0 : 0.0));
  }
  loss *= weight;
  if (grads == nullptr) return loss;

  grads->w2.noalias() += h.transpose() * d_o;
  if (p.use_bias) grads->b2 += d_o.sum();
  Matrix dh = d_o * p.w2.transpose();
  if (hidden_mask != nullptr) dh = dh.cwiseProduct(*hidden_mask);
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    if (pre.data()[i] <= 0.0) dh.data()[i] = 0.0;
  }
  grads->w1.noalias() += dh.transpose() * x;
  if (p.use_bias) grads->b1 += dh.colwise().sum().transpose();
  const Matrix dx = dh * p.w1;
  for (Eigen::Index i = 0; i < pairs; ++i) {
    const PairRef& r = refs[static_cast<std::size_t>(i)];
    const auto dprod = dx.row(i).head(F);
    grads->entity.row(r.u) += dprod.cwiseProduct(fused.entity.row(r.v));
    grads->entity.row(r.v) += dprod.cwiseProduct(fused.entity.row(r.u));
    grads->relation.row(r.rel) += dx.row(i).tail(R);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Ranking with g

// Logits of g for every entity as the partner of `anchor`. g is symmetric in
// its node arguments, so head and tail queries share one computation.
class EnsembleScorer {
 public:
  EnsembleScorer(const FusedEmbeddingTable& fused, const ScorerParams& params) : fused_(fused), params_(params) {}

  std::size_t entity_count() const { return static_cast<std::size_t>(fused_.entity.rows()); }

  void partner_scores(NodeIndex anchor, RelationKind r, std::vector<double>& out) const {
    const auto F = static_cast<Eigen::Index>(fused_.width());
    const auto R = static_cast<Eigen::Index>(fused_.relation_width());
    const auto rel = static_cast<Eigen::Index>(relation_index(r));
    // W1 [z_a * z_c ; z_e] = (W1_node diag(z_a)) z_c + W1_rel z_e
    Matrix scaled = params_.w1.leftCols(F);
    scaled.array().rowwise() *= fused_.entity.row(anchor).array();
    Vector offset = params_.w1.rightCols(R) * fused_.relation.row(rel).transpose();
    if (params_.use_bias) offset += params_.b1;
    Matrix pre = fused_.entity * scaled.transpose();
    pre.rowwise() += offset.transpose();
    const Vector o = pre.cwiseMax(0.0) * params_.w2;
    out.resize(static_cast<std::size_t>(o.size()));
    const double b2 = params_.use_bias ? params_.b2 : 0.0;
    for (Eigen::Index i = 0; i < o.size(); ++i) out[static_cast<std::size_t>(i)] = o(i) + b2;
  }

  void tail_scores(NodeIndex head, RelationKind r, std::vector<double>& out) const { partner_scores(head, r, out); }
  void head_scores(RelationKind r, NodeIndex tail, std::vector<double>& out) const { partner_scores(tail, r, out); }

 private:
  const FusedEmbeddingTable& fused_;
  const ScorerParams& params_;
};

// ---------------------------------------------------------------------------
// Fine-tuning loop

struct FinetuneConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  double dropout = 0.2;
  std::size_t negatives = 5;
  std::size_t hidden = 128;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t eval_every = 1;
  std::size_t retry_cap = 64;
  std::uint64_t seed = 0;
  NegativeStrategy strategy;
  bool freeze_topology = false;
  bool paper_exact = false;  // no bias terms in g
  RankOptions ranking;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("finetune.learning_rate must be >= 0");
    if (batch_size == 0) throw ConfigError("finetune.batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("finetune.dropout must lie in [0, 1)");
    if (negatives == 0) throw ConfigError("finetune.negatives must be >= 1");
    if (hidden == 0) throw ConfigError("finetune.hidden must be positive");
    if (eval_every == 0) throw ConfigError("finetune.eval_every must be positive");
    if (patience == 0) throw ConfigError("finetune.patience must be positive");
    strategy.validate();
  }
};

struct FinetuneResult {
  FusedEmbeddingTable fused;   // best-validation snapshot
  ScorerParams scorer;
  std::vector<double> loss_curve;        // mean training loss per positive, per epoch
  std::vector<double> valid_mrr_curve;   // validation MRR after each epoch (carried forward between evaluations)
  std::size_t best_epoch = 0;            // 1-based epoch of the snapshot, 0 = initialization
  double best_valid_mrr = 0.0;
  std::size_t epochs_run = 0;
  std::size_t fallback_anchors = 0;      // biased anchors with no candidates
};

inline std::vector<Triple> similar_triples(const MachineKnowledgeGraph& graph, std::span<const std::size_t> indices) {
  std::vector<Triple> out;
  for (std::size_t i : indices) {
    const Triple& t = graph.triples().at(i);
    if (t.relation == RelationKind::SimilarTo) out.push_back(t);
  }
  return out;
}

inline double validation_mrr(const MachineKnowledgeGraph& graph, const FusedEmbeddingTable& fused,
                             const ScorerParams& scorer, std::span<const Triple> valid, const RankOptions& ranking,
                             const std::vector<std::uint32_t>* labels) {
  const EnsembleScorer s(fused, scorer);
  return evaluate_ranking(s, valid, graph.triple_set(), ranking, labels).overall.mrr;
}

// Trains embeddings and scorer on the similarTo training triples with K
// negatives per positive; keeps the snapshot with the best validation MRR and
// stops after `patience` evaluations without improvement.
inline FinetuneResult finetune(const MachineKnowledgeGraph& graph, const TripleSplit& split, FusedEmbeddingTable fused,
                               ScorerParams scorer, const FinetuneConfig& config) {
  config.validate();
  const std::vector<Triple> positives = similar_triples(graph, split.train);
  const std::vector<Triple> valid = similar_triples(graph, split.valid);
  if (valid.empty()) throw ConfigError("fine-tuning needs validation similarTo triples");
  if (positives.empty()) throw ConfigError("fine-tuning needs training similarTo triples");
  if (scorer.input_width() != fused.scorer_input_width()) throw ShapeError("scorer input width does not match embeddings");
  scorer.use_bias = scorer.use_bias && !config.paper_exact;
  if (!scorer.use_bias) {
    scorer.b1.setZero();
    scorer.b2 = 0.0;
  }

  const TripleSet known(positives);
  BiasedCandidates candidates;
  const bool biased = config.strategy.kind == NegativeStrategy::Kind::Biased;
  FinetuneResult result;
  if (biased) {
    candidates = build_biased_candidates(graph, positives, config.strategy);
    result.fallback_anchors = candidates.fallback_count();
  }
  TypeLabels labels;
  if (config.ranking.same_type) labels = type_labels(graph);
  const std::vector<std::uint32_t>* label_ptr = config.ranking.same_type ? &labels.label : nullptr;

  Adam adam(AdamOptions{.learning_rate = config.learning_rate});
  AdamMoments ent_state(fused.entity.rows(), fused.entity.cols());
  AdamMoments rel_state(fused.relation.rows(), fused.relation.cols());
  AdamMoments w1_state(scorer.w1.rows(), scorer.w1.cols());
  AdamMoments b1_state(scorer.b1.size(), 1);
  AdamMoments w2_state(scorer.w2.size(), 1);
  AdamMoments b2_state(1, 1);
  FinetuneGradients grads = FinetuneGradients::zeros_like(fused, scorer);
  std::vector<char> touched(static_cast<std::size_t>(fused.entity.rows()), 0);
  std::vector<NodeIndex> touched_rows;

  Rng rng(derive_seed(config.seed, 0x46494E45ull));
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<FinetuneExample> batch;
  Matrix mask;

  result.best_valid_mrr = validation_mrr(graph, fused, scorer, valid, config.ranking, label_ptr);
  result.best_epoch = 0;
  result.fused = fused;
  result.scorer = scorer;
  double current_mrr = result.best_valid_mrr;
  std::size_t stale = 0;
  const double keep = config.dropout > 0.0 ? 1.0 / (1.0 - config.dropout) : 1.0;
  const auto topo = static_cast<Eigen::Index>(fused.topology_width);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const Triple& pos = positives[order[k]];
        batch.push_back({pos, sample_negatives(pos, config.negatives, config.strategy.kind, biased ? &candidates : nullptr,
                                               graph.node_count(), known, rng, config.retry_cap)});
      }
      const Matrix* mask_ptr = nullptr;
      if (config.dropout > 0.0) {
        mask.resize(static_cast<Eigen::Index>(batch.size() * (1 + config.negatives)), scorer.w1.rows());
        for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(config.dropout) ? 0.0 : keep;
        mask_ptr = &mask;
      }
      grads.w1.setZero();
      grads.b1.setZero();
      grads.w2.setZero();
      grads.b2 = 0.0;
      grads.relation.setZero();
      const double loss = finetune_loss(fused, scorer, batch, mask_ptr, &grads);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite fine-tuning loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b));
      }
      epoch_loss += loss * static_cast<double>(batch.size());

      for (const auto& ex : batch) {
        auto mark = [&](NodeIndex v) {
          if (!touched[v]) {
            touched[v] = 1;
            touched_rows.push_back(v);
          }
        };
        mark(ex.positive.head);
        mark(ex.positive.tail);
        for (NodeIndex n : ex.negatives) mark(n);
      }
      std::sort(touched_rows.begin(), touched_rows.end());

      adam.begin_step();
      for (NodeIndex v : touched_rows) {
        if (config.freeze_topology) grads.entity.row(v).head(topo).setZero();
        adam.update_row(fused.entity, grads.entity, ent_state, v);
        grads.entity.row(v).setZero();
        touched[v] = 0;
      }
      touched_rows.clear();
      if (!config.freeze_topology) adam.update_dense(fused.relation, grads.relation, rel_state);
      adam.update_dense(scorer.w1, grads.w1, w1_state);
      adam.update_dense(scorer.w2, grads.w2, w2_state);
      if (scorer.use_bias) {
        adam.update_dense(scorer.b1, grads.b1, b1_state);
        adam.update(&scorer.b2, &grads.b2, b2_state.first.data(), b2_state.second.data(), 1);
      }
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(positives.size()));
    result.epochs_run = epoch;

    if (epoch % config.eval_every == 0 || epoch == config.max_epochs) {
      current_mrr = validation_mrr(graph, fused, scorer, valid, config.ranking, label_ptr);
      if (current_mrr > result.best_valid_mrr) {
        result.best_valid_mrr = current_mrr;
        result.best_epoch = epoch;
        result.fused = fused;
        result.scorer = scorer;
        stale = 0;
      } else if (++stale >= config.patience) {
        result.valid_mrr_curve.push_back(current_mrr);
        break;
      }
    }
    result.valid_mrr_curve.push_back(current_mrr);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint

struct FinetuneCheckpointInfo {
  std::string model;
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double best_valid_mrr = 0.0;
  io::json config = io::json::object();
  std::string graph_fingerprint;
};

inline void save_finetune(const io::fs::path& path, const FusedEmbeddingTable& f, const ScorerParams& p,
                          const FinetuneCheckpointInfo& info) {
  io::Blob blob;
  blob.header = {{"kind", "finetune"},
                 {"model", info.model},
                 {"strategy", info.strategy},
                 {"seed", info.seed},
                 {"epoch", info.epoch},
                 {"best_valid_mrr", info.best_valid_mrr},
                 {"config", info.config},
                 {"graph_fingerprint", info.graph_fingerprint},
                 {"topology_width", f.topology_width},
                 {"feature_width", f.feature_width},
                 {"hidden", p.hidden()},
                 {"use_bias", p.use_bias}};
  blob.arrays.push_back(io::to_blob("entity", f.entity));
  blob.arrays.push_back(io::to_blob("relation", f.relation));
  blob.arrays.push_back(io::to_blob("w1", p.w1));
  blob.arrays.push_back(io::to_blob("b1", p.b1));
  blob.arrays.push_back(io::to_blob("w2", p.w2));
  blob.arrays.push_back(io::BlobArray{"b2", 1, 1, {p.b2}});
  io::write_blob(path, blob);
}

inline void load_finetune(const io::fs::path& path, FusedEmbeddingTable& f, ScorerParams& p,
                          FinetuneCheckpointInfo* info = nullptr) {
  const io::Blob blob = io::read_blob(path);
  if (blob.header.value("kind", "") != "finetune") throw FormatError(path.string() + " is not a fine-tune checkpoint");
  f.entity = io::matrix_from_blob(blob.array("entity"));
  f.relation = io::matrix_from_blob(blob.array("relation"));
  f.topology_width = blob.header.at("topology_width").get<std::size_t>();
  f.feature_width = blob.header.at("feature_width").get<std::size_t>();
  p.w1 = io::matrix_from_blob(blob.array("w1"));
  p.b1 = io::vector_from_blob(blob.array("b1"));
  p.w2 = io::vector_from_blob(blob.array("w2"));
  p.b2 = blob.array("b2").data.at(0);
  p.use_bias = blob.header.at("use_bias").get<bool>();
  if (info != nullptr) {
    info->model = blob.header.at("model").get<std::string>();
    info->strategy = blob.header.at("strategy").get<std::string>();
    info->seed = blob.header.at("seed").get<std::uint64_t>();
    info->epoch = blob.header.at("epoch").get<std::size_t>();
    info->best_valid_mrr = blob.header.at("best_valid_mrr").get<double>();
    info->config = blob.header.at("config");
    info->graph_fingerprint = blob.header.at("graph_fingerprint").get<std::string>();
  }
}

}  // namespace mkg
