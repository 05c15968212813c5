#include "iml/losses.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>

#include "iml/errors.hpp"
#include "iml/kernels.hpp"

namespace iml {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Untaped twin of log_discriminant(); same kernel sequence, so equal inputs
// give bitwise-equal outputs on both paths.
Tensor frozen_log_discriminant(const Tensor& z, const Tensor& anchors, double temperature) {
  return kernels::log_softmax_rows(kernels::scale(kernels::pairwise_sqdist(z, anchors), -1.0 / temperature));
}

Var kl_mean(Var student_log_p, Var teacher_log_p, KlOrder order) {
  Var kl = order == KlOrder::StudentFirst ? kl_rows(student_log_p, teacher_log_p)
                                          : kl_rows(teacher_log_p, student_log_p);
  return mean(kl);
}

void require_temperature(double t) {
  if (!(t > 0.0)) throw std::invalid_argument("temperature must be > 0");
}

}  // namespace

std::string_view method_name(MethodKind m) {
  switch (m) {
    case MethodKind::NU: return "NU";
    case MethodKind::FT: return "FT";
    case MethodKind::DFA: return "DFA";
    case MethodKind::IDA: return "IDA";
    case MethodKind::EIML: return "EIML";
    case MethodKind::PAR: return "PAR";
  }
  return "?";
}

MethodKind parse_method(std::string_view name) {
  const auto n = lower(name);
  if (n == "nu") return MethodKind::NU;
  if (n == "ft") return MethodKind::FT;
  if (n == "dfa") return MethodKind::DFA;
  if (n == "ida") return MethodKind::IDA;
  if (n == "eiml") return MethodKind::EIML;
  if (n == "par") return MethodKind::PAR;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view kl_order_name(KlOrder order) {
  return order == KlOrder::StudentFirst ? "student_first" : "teacher_first";
}

KlOrder parse_kl_order(std::string_view name) {
  const auto n = lower(name);
  if (n == "student_first") return KlOrder::StudentFirst;
  if (n == "teacher_first") return KlOrder::TeacherFirst;
  throw std::invalid_argument("unknown kl order '" + std::string(name) + "'");
}

Var meta_xent_loss(const BoundParams& params, const Episode& episode, double temperature) {
  require_temperature(temperature);
  if (episode.query_y.empty()) throw DegenerateEpisodeError("episode has no query points");
  Tape& tape = *params.vars.front().tape;
  Var zs = embed(params, tape.constant(episode.support_x));
  Var zq = embed(params, tape.constant(episode.query_x));
  Var protos = compute_prototypes(zs, episode.support_y, episode.ways());
  Var logits = scale(pairwise_sqdist(zq, protos), -1.0 / temperature);
  return mean(sub(logsumexp_rows(logits), pick(logits, episode.query_y)));
}

double meta_xent_loss(const ParamStore& params, const Episode& episode, double temperature) {
  Tape tape;
  return meta_xent_loss(bind(tape, params, false), episode, temperature).value().item();
}

Var ida_loss(const ModelSnapshot& old, const BoundParams& live, const Tensor& batch_x, const AnchorSet& anchors,
             double temperature, KlOrder order) {
  require_temperature(temperature);
  if (anchors.size() == 0) throw std::invalid_argument("ida_loss: empty anchor subset");
  if (batch_x.rows() == 0) throw std::invalid_argument("ida_loss: empty batch");
  Tape& tape = *live.vars.front().tape;
  const Tensor teacher = frozen_log_discriminant(embed(old.params(), batch_x), anchors.centers, temperature);
  Var student = log_discriminant(embed(live, tape.constant(batch_x)), tape.constant(anchors.centers), temperature);
  return kl_mean(student, tape.constant(teacher), order);
}

double ida_loss(const ModelSnapshot& old, const ParamStore& live, const Tensor& batch_x, const AnchorSet& anchors,
                double temperature, KlOrder order) {
  Tape tape;
  return ida_loss(old, bind(tape, live, false), batch_x, anchors, temperature, order).value().item();
}

Var dfa_loss(const ModelSnapshot& old, const BoundParams& live, const Tensor& batch_x) {
  if (batch_x.rows() == 0) throw std::invalid_argument("dfa_loss: empty batch");
  Tape& tape = *live.vars.front().tape;
  Var diff = sub(embed(live, tape.constant(batch_x)), tape.constant(embed(old.params(), batch_x)));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(batch_x.rows()));
}

double dfa_loss(const ModelSnapshot& old, const ParamStore& live, const Tensor& batch_x) {
  Tape tape;
  return dfa_loss(old, bind(tape, live, false), batch_x).value().item();
}

std::pair<Var, Var> eiml_loss(const ModelSnapshot& old, const BoundParams& live, const ExemplarEpisode& exemplars,
                              const Tensor& new_batch_x, const AnchorSet& anchors, double temperature,
                              KlOrder order) {
  require_temperature(temperature);
  if (exemplars.y.empty()) throw DegenerateEpisodeError("eiml_loss: exemplar episode is empty");
  Tape& tape = *live.vars.front().tape;

  const Tensor z_old = embed(old.params(), exemplars.x);
  const Tensor c_old = compute_prototypes(z_old, exemplars.y, exemplars.ways());
  const Tensor teacher = frozen_log_discriminant(z_old, c_old, temperature);

  Var z_new = embed(live, tape.constant(exemplars.x));
  Var c_new = compute_prototypes(z_new, exemplars.y, exemplars.ways());
  Var student = log_discriminant(z_new, c_new, temperature);

  Var align_old = kl_mean(student, tape.constant(teacher), order);
  Var align_new = ida_loss(old, live, new_batch_x, anchors, temperature, order);
  return {align_old, align_new};
}

ObjectiveTerms incremental_objective(MethodKind method, const ModelSnapshot& old, const BoundParams& live,
                                     const Episode& episode, const IncrementalAux& aux, const LossWeights& weights,
                                     double temperature, KlOrder order) {
  auto require = [&](bool present, const char* what) {
    if (!present) {
      throw std::invalid_argument(std::string(method_name(method)) + " objective requires " + what);
    }
  };

  Var ce = meta_xent_loss(live, episode, temperature);
  ObjectiveTerms out{ce, {}};
  out.breakdown.meta_ce = ce.value().item();
  out.breakdown.total = out.breakdown.meta_ce;

  switch (method) {
    case MethodKind::NU:
    case MethodKind::FT:
    case MethodKind::PAR:
      break;
    case MethodKind::IDA:
    case MethodKind::DFA: {
      require(aux.batch_x.has_value(), "a new-data batch");
      Var align;
      if (method == MethodKind::IDA) {
        require(aux.anchors.has_value(), "an anchor subset");
        align = ida_loss(old, live, *aux.batch_x, *aux.anchors, temperature, order);
      } else {
        align = dfa_loss(old, live, *aux.batch_x);
      }
      out.total = add(ce, scale(align, weights.lambda));
      out.breakdown.align = align.value().item();
      out.breakdown.lambda = weights.lambda;
      out.breakdown.total = out.total.value().item();
      break;
    }
    case MethodKind::EIML: {
      require(aux.batch_x.has_value(), "a new-data batch");
      require(aux.anchors.has_value(), "an anchor subset");
      require(aux.exemplars.has_value(), "an exemplar episode");
      auto [align_old, align_new] =
          eiml_loss(old, live, *aux.exemplars, *aux.batch_x, *aux.anchors, temperature, order);
      out.total = add(add(ce, scale(align_old, weights.lambda_old)), scale(align_new, weights.lambda_new));
      out.breakdown.align_old = align_old.value().item();
      out.breakdown.align_new = align_new.value().item();
      out.breakdown.align = out.breakdown.align_old + out.breakdown.align_new;
      out.breakdown.lambda = weights.lambda;
      out.breakdown.lambda_old = weights.lambda_old;
      out.breakdown.lambda_new = weights.lambda_new;
      out.breakdown.total = out.total.value().item();
      break;
    }
  }
  return out;
}

}  // namespace iml
