#pragma once

#include <optional>

#include "embridge/geometry.hpp"
#include "embridge/tape.hpp"

namespace embridge {

// All contrastive losses below assume unit rows (similarity = dot product)
// and a fixed positive temperature; there is no learnable-temperature path.

struct LossReport {
  double total = 0.0;
  double infonce_component = 0.0;  // symmetric query<->anchor InfoNCE
  double osr_component = 0.0;      // symmetric transported-query vs proxy term
  std::vector<double> per_sample_align;  // -sim(x_i, c_i)/tau
  std::vector<double> per_sample_neg;    // log sum_j exp(sim(x_i, c_j)/tau)
  int skipped_samples = 0;
};

struct LambdaBound {
  double value = 0.0;
  bool degenerate_direction = false;  // ||c_bar|| below the direction cut
  bool infinite = false;              // vanishing transported-loss gradient
};

/// Batch InfoNCE with in-batch negatives: mean_i of
/// -log( exp(q_i.k_i / tau) / sum_j exp(q_i.k_j / tau) ).
/// Queries and keys must pair up row-for-row (square similarity matrix).
double info_nce(const Mat& queries, const Mat& keys, double tau);

/// Per-sample positive-pair part, -sim(x, c)/tau.
double align_part(const Vec& x, const Vec& c, double tau);

/// Per-sample negative part, log sum_j exp(sim(x, k_j)/tau); stable
/// log-sum-exp.
double neg_part(const Vec& x, const Mat& keys, double tau);

/// Anchor direction: exact gradient of cosine similarity w.r.t. x scaled by
/// 1/tau; at unit inputs (1/tau)(I - x x^T)c. Empty when its norm falls
/// below eps_dir (near-parallel embedding and anchor).
std::optional<Vec> anchor_direction(const Vec& x, const Vec& c, double tau,
                                    double eps_dir = kEpsDir);

struct AnchorDirections {
  Mat dirs;                   // one row per sample; undefined where !ok
  std::vector<char> ok;       // per-sample validity
  int degenerate = 0;
};
AnchorDirections anchor_directions(const Mat& x, const Mat& anchors,
                                   double tau, double eps_dir = kEpsDir);

/// Stability bound for the regularizer weight: ||c_bar|| / ||g_T|| where g_T
/// is the loss gradient at the transported embedding. For unit embeddings
/// and the positive-pair term both norms are 1/tau and the bound is 1.
LambdaBound lambda_bound(const Vec& c_bar, const Vec& g_T,
                         double eps_dir = kEpsDir);

// ------------------------------------------------------------ tape builders

/// InfoNCE node over existing tape nodes (rows assumed unit).
Tape::NodeId info_nce_node(Tape& t, Tape::NodeId queries, Tape::NodeId keys,
                           double tau);

struct OsrOptions {
  double tau = 0.07;
  double eps_dir = kEpsDir;
  // Projection denominator inside the transport operator. Exact (0) by
  // default: degenerate directions are excluded up front and the exact form
  // is what annihilates the anchor-direction component of the gradient.
  double proj_eps = 0.0;
};

/// One-directional orthogonal-subspace-regularized alignment: queries are
/// the embeddings transported off their anchor directions, keys are the
/// proxies, negatives are the proxies of the whole batch.
struct OsrGraph {
  Tape::NodeId loss = -1;
  Tape::NodeId transported = -1;  // normalized projected queries (kept rows)
  std::vector<int> kept;          // original row indices that survived
  int skipped = 0;
};
OsrGraph osr_graph(Tape& t, Tape::NodeId xb, const Mat& anchors,
                   const Mat& proxies, const OsrOptions& opt);

/// Scalar convenience wrapper over osr_graph.
struct OsrValue {
  double loss = 0.0;
  int skipped = 0;
};
OsrValue osr_loss(const Mat& xb, const Mat& anchors, const Mat& proxies,
                  double tau, const OsrOptions* opt = nullptr);

enum class ProxyAlignMode {
  kOsr,     // transported queries (projection + renormalize)
  kDirect,  // plain InfoNCE against proxies, no transport
};

struct CombinedOptions {
  double tau = 0.07;
  double lambda = 1.0;
  ProxyAlignMode mode = ProxyAlignMode::kOsr;
  double eps_dir = kEpsDir;
  double proj_eps = 0.0;
};

/// Full training objective: symmetric anchor InfoNCE plus lambda times the
/// symmetric proxy-alignment term.
struct CombinedGraph {
  Tape::NodeId total = -1;
  Tape::NodeId infonce = -1;
  Tape::NodeId osr = -1;          // -1 when lambda == 0
  Tape::NodeId sim_to_anchors = -1;  // query->anchor similarity matrix node
  OsrGraph osr_fwd;               // transported-query direction (valid in kOsr)
  int skipped = 0;
};
CombinedGraph combined_graph(Tape& t, Tape::NodeId xb, const Mat& anchors,
                             const Mat& proxies, const CombinedOptions& opt);

/// Eager combined loss with the per-sample decomposition filled in.
LossReport combined_loss(const Mat& xb, const Mat& anchors, const Mat& proxies,
                         double lambda, double tau,
                         const CombinedOptions* opt = nullptr);

/// Positive-pair-only alignment loss node: mean_i of -sim(x_i, c_i)/tau.
Tape::NodeId align_mean_node(Tape& t, Tape::NodeId xb, Tape::NodeId anchors,
                             double tau);

}  // namespace embridge
