#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "iml/autodiff.hpp"
#include "iml/data.hpp"
#include "iml/model.hpp"

namespace iml {

// NU trains nothing; PAR retrains from scratch on old + new; the others
// fine-tune the old snapshot on new data with different alignment terms.
enum class MethodKind { NU, FT, DFA, IDA, EIML, PAR };

std::string_view method_name(MethodKind m);
// Case-insensitive; throws std::invalid_argument for unknown names.
MethodKind parse_method(std::string_view name);

// Argument order of the KL divergence between the live (student) and frozen
// (teacher) discriminants.
enum class KlOrder { StudentFirst, TeacherFirst };

std::string_view kl_order_name(KlOrder order);
KlOrder parse_kl_order(std::string_view name);

struct LossWeights {
  double lambda = 1.0;
  double lambda_old = 1.0;
  double lambda_new = 1.0;
};

struct LossBreakdown {
  double meta_ce = 0.0;
  double align = 0.0;
  double align_old = 0.0;
  double align_new = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double lambda_old = 0.0;
  double lambda_new = 0.0;
};

// Mean over query points of ||z_i - c_{y_i}||^2 / T + LSE_k(-||z_i - c_k||^2 / T),
// with prototypes built from the support set only.
Var meta_xent_loss(const BoundParams& params, const Episode& episode, double temperature);
double meta_xent_loss(const ParamStore& params, const Episode& episode, double temperature);

// Mean over the batch of KL between the discriminants of the live and the
// frozen backbone relative to the given old-class anchors. Only the live
// side is differentiable.
Var ida_loss(const ModelSnapshot& old, const BoundParams& live, const Tensor& batch_x, const AnchorSet& anchors,
             double temperature, KlOrder order = KlOrder::StudentFirst);
double ida_loss(const ModelSnapshot& old, const ParamStore& live, const Tensor& batch_x, const AnchorSet& anchors,
                double temperature, KlOrder order = KlOrder::StudentFirst);

// Mean squared L2 distance between live and frozen embeddings of the batch.
Var dfa_loss(const ModelSnapshot& old, const BoundParams& live, const Tensor& batch_x);
double dfa_loss(const ModelSnapshot& old, const ParamStore& live, const Tensor& batch_x);

// align_old: KL between discriminants over old exemplars, with prototypes
// recomputed from the exemplars through each backbone. align_new: ida_loss
// on the new batch.
std::pair<Var, Var> eiml_loss(const ModelSnapshot& old, const BoundParams& live, const ExemplarEpisode& exemplars,
                              const Tensor& new_batch_x, const AnchorSet& anchors, double temperature,
                              KlOrder order = KlOrder::StudentFirst);

// Method-specific inputs besides the new-data episode.
struct IncrementalAux {
  std::optional<AnchorSet> anchors;           // IDA, EIML
  std::optional<Tensor> batch_x;              // IDA, DFA, EIML (new data)
  std::optional<ExemplarEpisode> exemplars;   // EIML
};

struct ObjectiveTerms {
  Var total;
  LossBreakdown breakdown;
};

ObjectiveTerms incremental_objective(MethodKind method, const ModelSnapshot& old, const BoundParams& live,
                                     const Episode& episode, const IncrementalAux& aux, const LossWeights& weights,
                                     double temperature, KlOrder order = KlOrder::StudentFirst);

}  // namespace iml
