#pragma once

#include <string>
#include <utility>
#include <vector>

#include "automoe/moe_model.hpp"
#include "automoe/param_store.hpp"
#include "automoe/search_space.hpp"

namespace automoe {

/// Weight store shaped by max_gene(space). Every subnet reads front blocks of it.
class Supernet {
 public:
  Supernet(SearchSpace space, ModelDims dims, std::uint64_t seed);
  /// Wraps existing weights; their names and shapes must match the space's max gene.
  Supernet(SearchSpace space, ModelDims dims, ParamStore params);

  const SearchSpace& space() const noexcept { return space_; }
  const ModelDims& dims() const noexcept { return dims_; }
  const Gene& max() const noexcept { return max_gene_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

 private:
  SearchSpace space_;
  ModelDims dims_;
  Gene max_gene_;
  ParamStore params_;
};

/// A gene plus the front block of each supernet tensor it reads. Slices are
/// resolved against live storage at bind time, so writes to the supernet are
/// visible to every view.
struct SubnetView {
  Gene gene;
  std::vector<ParamSpec> slices;
};

/// supernet_router[0:e, 0:d].
Tensor extract_router(const Tensor& supernet_router, int e, int d);
/// (W_in[0:h, 0:d], W_out[0:d, 0:h]); h == 0 yields empty matrices (identity expert).
std::pair<Tensor, Tensor> extract_expert_ffn(const Tensor& w_in, const Tensor& w_out, int h, int d);

/// Throws ConfigError when the gene is not valid in the supernet's space.
SubnetView extract_subnet(const Supernet& net, const Gene& gene);

/// Copy mode: an exact-shape store holding the view's current values.
ParamStore materialize(const Supernet& net, const SubnetView& view);

struct StepHyper {
  Real lr = Real(1e-3);
  Real label_smoothing = Real(0.1);
  Real aux_coeff = Real(0.01);
  Real dropout = Real(0);
};

struct StepMetrics {
  double loss = 0;  // ce + aux_coeff · aux
  double ce = 0;
  double aux = 0;
  std::size_t tokens = 0;
  Gene gene;
};

/// One optimizer step of `gene` reading `slices` of `store`. Shared by plain
/// and supernet training so both follow the same arithmetic. Throws
/// NumericalError (step -1, no checkpoint) if the loss is not finite; the
/// caller fills in the training context.
StepMetrics train_step(ParamStore& store, Adam& adam, const Gene& gene, const std::vector<ParamSpec>& slices,
                       const Batch& batch, const StepHyper& hyper, Rng& rng);

/// Samples one gene uniformly from the space with `rng`, then runs train_step
/// on its view. Only the view's front blocks receive gradients and updates.
StepMetrics spos_train_step(Supernet& net, Adam& adam, const Batch& batch, const StepHyper& hyper, Rng& rng);
/// Separate streams for the architecture draw and for dropout, so a singleton
/// space consumes dropout randomness exactly like plain training.
StepMetrics spos_train_step(Supernet& net, Adam& adam, const Batch& batch, const StepHyper& hyper, Rng& arch_rng,
                            Rng& dropout_rng);

/// Token-weighted mean label-smoothed cross-entropy of the subnet over the
/// batches; no weights change. Throws DimensionError on an empty set.
double estimate_fitness(const Supernet& net, const Gene& gene, const std::vector<Batch>& validation,
                        Real label_smoothing = Real(0.1));

/// Checkpoints record the space hash; loading against another space throws ConfigError.
void save_supernet(const std::string& path, const Supernet& net);
Supernet load_supernet(const std::string& path, const SearchSpace& space);

}  // namespace automoe
