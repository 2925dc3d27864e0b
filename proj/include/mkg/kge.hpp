#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mkg/error.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/linalg.hpp"
#include "mkg/log.hpp"
#include "mkg/optim.hpp"
#include "mkg/random.hpp"

namespace mkg {

enum class ModelKind { TransE, DistMult, ComplEx };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::TransE: return "transe";
    case ModelKind::DistMult: return "distmult";
    case ModelKind::ComplEx: return "complex";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "transe") return ModelKind::TransE;
  if (s == "distmult") return ModelKind::DistMult;
  if (s == "complex") return ModelKind::ComplEx;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected transe, distmult or complex)");
}

// Stored width of one embedding row. ComplEx keeps real parts in the first
// `dim` columns and imaginary parts in the next `dim`.
inline std::size_t embedding_width(ModelKind k, std::size_t dim) { return k == ModelKind::ComplEx ? 2 * dim : dim; }

struct EmbeddingTable {
  ModelKind kind = ModelKind::DistMult;
  std::size_t dim = 100;
  Matrix entity;    // entities x width
  Matrix relation;  // relations x width

  std::size_t width() const { return embedding_width(kind, dim); }
  std::size_t entity_count() const { return static_cast<std::size_t>(entity.rows()); }
};

struct TrainConfig {
  ModelKind model = ModelKind::DistMult;
  std::size_t dim = 100;
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  double dropout = 0.2;
  std::size_t negatives = 1;
  std::size_t retry_cap = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw ConfigError("train.dim must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
    if (negatives == 0) throw ConfigError("train.negatives must be positive");
    if (retry_cap == 0) throw ConfigError("train.retry_cap must be positive");
  }
};

inline void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm > 0.0) m.row(r) /= norm;
  }
}

// Uniform in [-6/sqrt(dim), 6/sqrt(dim)]. TransE entity rows start on the unit
// sphere, where training keeps them.
inline EmbeddingTable init_embeddings(std::size_t entity_count, const TrainConfig& config,
                                      std::size_t relation_count = kRelationCount) {
  config.validate();
  EmbeddingTable t;
  t.kind = config.model;
  t.dim = config.dim;
  const auto w = static_cast<Eigen::Index>(t.width());
  t.entity.resize(static_cast<Eigen::Index>(entity_count), w);
  t.relation.resize(static_cast<Eigen::Index>(relation_count), w);
  const double bound = 6.0 / std::sqrt(static_cast<double>(config.dim));
  Rng rng(derive_seed(config.seed, 0x494E4954ull));
  for (Eigen::Index i = 0; i < t.entity.size(); ++i) t.entity.data()[i] = rng.uniform(-bound, bound);
  for (Eigen::Index i = 0; i < t.relation.size(); ++i) t.relation.data()[i] = rng.uniform(-bound, bound);
  if (t.kind == ModelKind::TransE) normalize_rows(t.entity);
  return t;
}

inline EmbeddingTable init_embeddings(const MachineKnowledgeGraph& graph, const TrainConfig& config) {
  return init_embeddings(graph.node_count(), config);
}

// Raw score functions over embedding rows (all three spans share one width).
//   TransE:   -|h + r - t|_2
//   DistMult: sum_i h_i r_i t_i
//   ComplEx:  Re(sum_i h_i r_i conj(t_i))
inline double score(ModelKind kind, std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  const std::size_t n = h.size();
  switch (kind) {
    case ModelKind::TransE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = h[i] + r[i] - t[i];
        sq += d * d;
      }
      return -std::sqrt(sq);
    }
    case ModelKind::DistMult: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += h[i] * r[i] * t[i];
      return s;
    }
    case ModelKind::ComplEx: {
      const std::size_t k = n / 2;
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double a = h[i], b = h[k + i];
        const double c = r[i], d = r[k + i];
        const double e = t[i], f = t[k + i];
        s += (a * c - b * d) * e + (a * d + b * c) * f;
      }
      return s;
    }
  }
  return 0.0;
}

// Adds coeff * d(score)/d(h, r, t) into the gradient spans. TransE uses the
// zero subgradient at h + r == t.
inline void accumulate_score_gradient(ModelKind kind, std::span<const double> h, std::span<const double> r,
                                      std::span<const double> t, double coeff, std::span<double> gh,
                                      std::span<double> gr, std::span<double> gt) {
  const std::size_t n = h.size();
  switch (kind) {
    case ModelKind::TransE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = h[i] + r[i] - t[i];
        sq += d * d;
      }
      const double norm = std::sqrt(sq);
      if (norm == 0.0) return;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = -coeff * (h[i] + r[i] - t[i]) / norm;
        gh[i] += g;
        gr[i] += g;
        gt[i] -= g;
      }
      return;
    }
    case ModelKind::DistMult:
      for (std::size_t i = 0; i < n; ++i) {
        gh[i] += coeff * r[i] * t[i];
        gr[i] += coeff * h[i] * t[i];
        gt[i] += coeff * h[i] * r[i];
      }
      return;
    case ModelKind::ComplEx: {
      const std::size_t k = n / 2;
      for (std::size_t i = 0; i < k; ++i) {
        const double a = h[i], b = h[k + i];
        const double c = r[i], d = r[k + i];
        const double e = t[i], f = t[k + i];
        gh[i] += coeff * (c * e + d * f);
        gh[k + i] += coeff * (c * f - d * e);
        gr[i] += coeff * (a * e + b * f);
        gr[k + i] += coeff * (a * f - b * e);
        gt[i] += coeff * (a * c - b * d);
        gt[k + i] += coeff * (a * d + b * c);
      }
      return;
    }
  }
}

inline double score(const EmbeddingTable& table, NodeIndex h, RelationKind r, NodeIndex t) {
  const auto n = table.entity_count();
  if (h >= n || t >= n) throw IndexError("entity index out of range");
  const auto ri = static_cast<Eigen::Index>(relation_index(r));
  if (ri >= table.relation.rows()) throw IndexError("relation index out of range");
  return score(table.kind, row_span(table.entity, h), row_span(table.relation, ri), row_span(table.entity, t));
}

struct Corruption {
  Triple triple;
  bool exhausted = false;  // retry cap hit; `triple` is the last rejected candidate
};

// Replaces the head or the tail (probability 1/2 each) with a uniformly drawn
// entity, redrawing while the result is a self-loop or a known true triple.
inline Corruption corrupt_negative(const Triple& triple, std::size_t entity_count, const TripleSet& known, Rng& rng,
                                   std::size_t retry_cap = 64) {
  if (entity_count < 2) throw ConfigError("negative sampling needs at least two entities");
  Triple candidate = triple;
  for (std::size_t attempt = 0; attempt < retry_cap; ++attempt) {
    candidate = triple;
    const auto e = static_cast<NodeIndex>(rng.index(entity_count));
    if (rng.bernoulli(0.5)) {
      candidate.head = e;
    } else {
      candidate.tail = e;
    }
    if (candidate.head != candidate.tail && !known.contains(candidate)) return {candidate, false};
  }
  return {candidate, true};
}

inline Corruption corrupt_negative(const Triple& triple, const MachineKnowledgeGraph& graph, Rng& rng,
                                   std::size_t retry_cap = 64) {
  return corrupt_negative(triple, graph.node_count(), graph.triple_set(), rng, retry_cap);
}

// Inverted dropout mask: 0 with probability p, 1/(1-p) otherwise.
inline void draw_dropout_mask(std::span<double> mask, double p, Rng& rng) {
  if (p <= 0.0) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return;
  }
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
}

// Logistic loss of one positive and its corruptions, with the gradient
// scaled by `weight` accumulated into the entity/relation gradient matrices.
// Masks (one per entity occurrence, same width as the table) model dropout.
struct Stage1Example {
  Triple positive;
  std::vector<Triple> negatives;
};

inline double stage1_example_loss(const EmbeddingTable& table, const Stage1Example& ex,
                                  std::span<const std::vector<double>> masks, double weight, Matrix* grad_entity,
                                  Matrix* grad_relation) {
  const std::size_t w = table.width();
  std::vector<double> hh(w), tt(w), gh(w), gr(w), gt(w);
  double loss = 0.0;
  std::size_t mask_at = 0;
  auto one = [&](const Triple& tr, bool positive) {
    const auto hrow = row_span(table.entity, tr.head);
    const auto trow = row_span(table.entity, tr.tail);
    const auto rrow = row_span(table.relation, static_cast<Eigen::Index>(relation_index(tr.relation)));
    const std::vector<double>* mh = masks.empty() ? nullptr : &masks[mask_at++];
    const std::vector<double>* mt = masks.empty() ? nullptr : &masks[mask_at++];
    for (std::size_t i = 0; i < w; ++i) {
      hh[i] = mh ? hrow[i] * (*mh)[i] : hrow[i];
      tt[i] = mt ? trow[i] * (*mt)[i] : trow[i];
    }
    const double s = score(table.kind, hh, rrow, tt);
    loss += positive ? softplus(-s) : softplus(s);
    if (grad_entity == nullptr) return;
    const double dl = positive ? sigmoid(s) - 1.0 : sigmoid(s);
    std::fill(gh.begin(), gh.end(), 0.0);
    std::fill(gr.begin(), gr.end(), 0.0);
    std::fill(gt.begin(), gt.end(), 0.0);
    accumulate_score_gradient(table.kind, hh, rrow, tt, weight * dl, gh, gr, gt);
    auto geh = row_span(*grad_entity, tr.head);
    auto get = row_span(*grad_entity, tr.tail);
    auto gre = row_span(*grad_relation, static_cast<Eigen::Index>(relation_index(tr.relation)));
    for (std::size_t i = 0; i < w; ++i) {
      geh[i] += mh ? gh[i] * (*mh)[i] : gh[i];
      get[i] += mt ? gt[i] * (*mt)[i] : gt[i];
      gre[i] += gr[i];
    }
  };
  one(ex.positive, true);
  for (const Triple& n : ex.negatives) one(n, false);
  return loss;
}

struct Stage1Result {
  EmbeddingTable table;
  std::vector<double> loss_curve;  // mean loss per positive, one entry per epoch
  std::size_t exhausted_corruptions = 0;
};

// Mini-batch Adam on -ln s(pos) - sum ln(1 - s(neg)), negatives from
// corrupt_negative filtered against the training triples.
inline Stage1Result train_stage1(const MachineKnowledgeGraph& graph, const TripleSplit& split,
                                 const TrainConfig& config) {
  config.validate();
  if (split.train.empty()) throw ConfigError("training split is empty");
  const std::vector<Triple> train = gather(graph, split.train);
  const TripleSet known(train);

  Stage1Result result;
  result.table = init_embeddings(graph, config);
  EmbeddingTable& table = result.table;
  const std::size_t w = table.width();

  Adam adam(AdamOptions{.learning_rate = config.learning_rate});
  AdamMoments ent_state(table.entity.rows(), table.entity.cols());
  AdamMoments rel_state(table.relation.rows(), table.relation.cols());
  Matrix grad_entity = Matrix::Zero(table.entity.rows(), table.entity.cols());
  Matrix grad_relation = Matrix::Zero(table.relation.rows(), table.relation.cols());
  std::vector<char> touched(table.entity_count(), 0);
  std::vector<NodeIndex> touched_rows;

  Rng rng(derive_seed(config.seed, 0x535441474531ull));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t masks_per_example = 2 * (1 + config.negatives);
  std::vector<std::vector<double>> masks(config.dropout > 0.0 ? masks_per_example : 0, std::vector<double>(w));
  Stage1Example ex;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(stop - start);
      grad_relation.setZero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        ex.positive = train[order[k]];
        ex.negatives.clear();
        for (std::size_t j = 0; j < config.negatives; ++j) {
          const Corruption c = corrupt_negative(ex.positive, table.entity_count(), known, rng, config.retry_cap);
          if (c.exhausted) ++result.exhausted_corruptions;
          ex.negatives.push_back(c.triple);
        }
        for (auto& m : masks) draw_dropout_mask(m, config.dropout, rng);
        auto mark = [&](NodeIndex v) {
          if (!touched[v]) {
            touched[v] = 1;
            touched_rows.push_back(v);
          }
        };
        mark(ex.positive.head);
        mark(ex.positive.tail);
        for (const Triple& n : ex.negatives) mark(n.head), mark(n.tail);
        batch_loss += stage1_example_loss(table, ex, masks, weight, &grad_entity, &grad_relation);
      }
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      }
      epoch_loss += batch_loss;

      adam.begin_step();
      std::sort(touched_rows.begin(), touched_rows.end());
      for (NodeIndex v : touched_rows) {
        adam.update_row(table.entity, grad_entity, ent_state, v);
        if (table.kind == ModelKind::TransE) {
          const double norm = table.entity.row(v).norm();
          if (norm > 0.0) table.entity.row(v) /= norm;
        }
        grad_entity.row(v).setZero();
        touched[v] = 0;
      }
      touched_rows.clear();
      adam.update_dense(table.relation, grad_relation, rel_state);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  if (result.exhausted_corruptions > 0) {
    log_warn(std::to_string(result.exhausted_corruptions) + " corruptions hit the retry cap");
  }
  return result;
}

// Scores every entity as the replacement for one side of a triple.
class KgeScorer {
 public:
  explicit KgeScorer(const EmbeddingTable& table) : table_(table) {}

  std::size_t entity_count() const { return table_.entity_count(); }

  void tail_scores(NodeIndex head, RelationKind r, std::vector<double>& out) const {
    const auto h = table_.entity.row(head);
    const auto rel = table_.relation.row(static_cast<Eigen::Index>(relation_index(r)));
    const auto n = table_.entity.rows();
    const auto k = static_cast<Eigen::Index>(table_.dim);
    out.resize(static_cast<std::size_t>(n));
    Eigen::Map<Eigen::VectorXd> o(out.data(), n);
    switch (table_.kind) {
      case ModelKind::TransE: {
        const Eigen::RowVectorXd q = h + rel;
        for (Eigen::Index c = 0; c < n; ++c) o(c) = -(q - table_.entity.row(c)).norm();
        return;
      }
      case ModelKind::DistMult:
        o.noalias() = table_.entity * h.cwiseProduct(rel).transpose();
        return;
      case ModelKind::ComplEx: {
        // Re(<h r, conj(c)>) = (hr)_re . c_re + (hr)_im . c_im
        Eigen::VectorXd q(2 * k);
        for (Eigen::Index i = 0; i < k; ++i) {
          q(i) = h(i) * rel(i) - h(k + i) * rel(k + i);
          q(k + i) = h(i) * rel(k + i) + h(k + i) * rel(i);
        }
        o.noalias() = table_.entity * q;
        return;
      }
    }
  }

  void head_scores(RelationKind r, NodeIndex tail, std::vector<double>& out) const {
    const auto t = table_.entity.row(tail);
    const auto rel = table_.relation.row(static_cast<Eigen::Index>(relation_index(r)));
    const auto n = table_.entity.rows();
    const auto k = static_cast<Eigen::Index>(table_.dim);
    out.resize(static_cast<std::size_t>(n));
    Eigen::Map<Eigen::VectorXd> o(out.data(), n);
    switch (table_.kind) {
      case ModelKind::TransE: {
        const Eigen::RowVectorXd q = rel - t;
        for (Eigen::Index c = 0; c < n; ++c) o(c) = -(table_.entity.row(c) + q).norm();
        return;
      }
      case ModelKind::DistMult:
        o.noalias() = table_.entity * rel.cwiseProduct(t).transpose();
        return;
      case ModelKind::ComplEx: {
        // Re(c * w) with w = r conj(t): c_re w_re - c_im w_im
        Eigen::VectorXd q(2 * k);
        for (Eigen::Index i = 0; i < k; ++i) {
          const double wr = rel(i) * t(i) + rel(k + i) * t(k + i);
          const double wi = rel(k + i) * t(i) - rel(i) * t(k + i);
          q(i) = wr;
          q(k + i) = -wi;
        }
        o.noalias() = table_.entity * q;
        return;
      }
    }
  }

 private:
  const EmbeddingTable& table_;
};

struct CheckpointInfo {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string graph_fingerprint;
};

inline void save_embeddings(const io::fs::path& path, const EmbeddingTable& t, const CheckpointInfo& info) {
  io::Blob blob;
  blob.header = {{"kind", "embedding"},
                 {"model", std::string(to_string(t.kind))},
                 {"dim", t.dim},
                 {"width", t.width()},
                 {"epoch", info.epoch},
                 {"seed", info.seed},
                 {"graph_fingerprint", info.graph_fingerprint}};
  blob.arrays.push_back(io::to_blob("entity", t.entity));
  blob.arrays.push_back(io::to_blob("relation", t.relation));
  io::write_blob(path, blob);
}

inline EmbeddingTable load_embeddings(const io::fs::path& path, CheckpointInfo* info = nullptr) {
  const io::Blob blob = io::read_blob(path);
  if (blob.header.value("kind", "") != "embedding") throw FormatError(path.string() + " is not an embedding checkpoint");
  EmbeddingTable t;
  t.kind = parse_model_kind(blob.header.at("model").get<std::string>());
  t.dim = blob.header.at("dim").get<std::size_t>();
  t.entity = io::matrix_from_blob(blob.array("entity"));
  t.relation = io::matrix_from_blob(blob.array("relation"));
  if (info != nullptr) {
    info->epoch = blob.header.at("epoch").get<std::size_t>();
    info->seed = blob.header.at("seed").get<std::uint64_t>();
    info->graph_fingerprint = blob.header.at("graph_fingerprint").get<std::string>();
  }
  return t;
}

}  // namespace mkg
