#include "automoe/supernet.hpp"

#include <cmath>

#include "automoe/checkpoint.hpp"
#include "automoe/errors.hpp"

namespace automoe {

Supernet::Supernet(SearchSpace space, ModelDims dims, std::uint64_t seed)
    : space_(std::move(space)), dims_(dims) {
  require_valid_space(space_);
  max_gene_ = max_gene(space_);
  params_ = ParamStore::initialized(parameter_layout(max_gene_, dims_), seed);
}

Supernet::Supernet(SearchSpace space, ModelDims dims, ParamStore params)
    : space_(std::move(space)), dims_(dims), params_(std::move(params)) {
  require_valid_space(space_);
  max_gene_ = max_gene(space_);
  const auto layout = parameter_layout(max_gene_, dims_);
  if (layout.size() != params_.names().size()) {
    throw ConfigError("supernet weights hold " + std::to_string(params_.names().size()) + " tensors, space needs " +
                      std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    if (!params_.contains(spec.name)) throw ConfigError("supernet weights lack " + spec.name);
    if (params_.value(spec.name).shape() != spec.shape) {
      throw ConfigError("supernet tensor " + spec.name + " has shape " + shape_str(params_.value(spec.name).shape()) +
                        ", space needs " + shape_str(spec.shape));
    }
  }
}

Tensor extract_router(const Tensor& router, int e, int d) {
  if (router.rank() != 2) throw DimensionError("router must be a matrix");
  if (e < 1 || static_cast<std::size_t>(e) > router.rows() || d < 1 || static_cast<std::size_t>(d) > router.cols()) {
    throw DimensionError("router slice [" + std::to_string(e) + "x" + std::to_string(d) + "] outside " +
                         shape_str(router.shape()));
  }
  return front_block(router, static_cast<std::size_t>(e), static_cast<std::size_t>(d));
}

std::pair<Tensor, Tensor> extract_expert_ffn(const Tensor& w_in, const Tensor& w_out, int h, int d) {
  if (w_in.rank() != 2 || w_out.rank() != 2 || w_in.rows() != w_out.cols() || w_in.cols() != w_out.rows()) {
    throw DimensionError("expert matrices " + shape_str(w_in.shape()) + " and " + shape_str(w_out.shape()) +
                         " are not a transposed pair");
  }
  if (h < 0 || static_cast<std::size_t>(h) > w_in.rows() || d < 1 || static_cast<std::size_t>(d) > w_in.cols()) {
    throw DimensionError("expert slice h=" + std::to_string(h) + ", d=" + std::to_string(d) + " outside " +
                         shape_str(w_in.shape()));
  }
  const auto hs = static_cast<std::size_t>(h), ds = static_cast<std::size_t>(d);
  return {front_block(w_in, hs, ds), front_block(w_out, ds, hs)};
}

SubnetView extract_subnet(const Supernet& net, const Gene& gene) {
  const auto problems = validate_gene(net.space(), gene);
  if (!problems.empty()) {
    std::string msg = "gene is not valid in the supernet's space:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  SubnetView view{gene, parameter_layout(gene, net.dims())};
  for (const auto& s : view.slices) {
    const Tensor& stored = net.params().value(s.name);
    for (std::size_t a = 0; a < s.shape.size(); ++a) {
      if (s.shape[a] > stored.shape()[a]) throw DimensionError("slice " + s.name + " exceeds supernet storage");
    }
  }
  return view;
}

ParamStore materialize(const Supernet& net, const SubnetView& view) {
  ParamStore out;
  for (const auto& s : view.slices) {
    const Tensor& src = net.params().value(s.name);
    out.add(s.name, s.shape.size() == 2 ? front_block(src, s.shape[0], s.shape[1]) : front_block(src, s.shape[0], 0));
  }
  return out;
}

StepMetrics train_step(ParamStore& store, Adam& adam, const Gene& gene, const std::vector<ParamSpec>& slices,
                       const Batch& batch, const StepHyper& hyper, Rng& rng) {
  if (batch.size() == 0) throw DimensionError("empty training batch");
  Tape tape(true);
  BoundWeights w = bind_weights(tape, store, slices, true);
  ForwardOptions opts;
  opts.dropout = hyper.dropout;
  opts.rng = &rng;
  ForwardResult fwd = forward(tape, w, gene, batch, opts);
  LossTerms loss = model_loss(tape, fwd, batch, hyper.label_smoothing, hyper.aux_coeff);
  StepMetrics m;
  m.loss = tape.value(loss.total)[0];
  m.ce = tape.value(loss.ce)[0];
  m.aux = tape.value(loss.aux)[0];
  m.tokens = batch.num_target_tokens();
  m.gene = gene;
  if (!std::isfinite(m.loss)) throw NumericalError("non-finite training loss", -1, "");
  tape.backward(loss.total);
  adam.step(store, hyper.lr);
  return m;
}

StepMetrics spos_train_step(Supernet& net, Adam& adam, const Batch& batch, const StepHyper& hyper, Rng& arch_rng,
                            Rng& dropout_rng) {
  const Gene gene = sample_gene(net.space(), arch_rng);
  const SubnetView view = extract_subnet(net, gene);
  return train_step(net.params(), adam, view.gene, view.slices, batch, hyper, dropout_rng);
}

StepMetrics spos_train_step(Supernet& net, Adam& adam, const Batch& batch, const StepHyper& hyper, Rng& rng) {
  return spos_train_step(net, adam, batch, hyper, rng, rng);
}

double estimate_fitness(const Supernet& net, const Gene& gene, const std::vector<Batch>& validation,
                        Real label_smoothing) {
  if (validation.empty()) throw DimensionError("empty validation set");
  const SubnetView view = extract_subnet(net, gene);
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& batch : validation) {
    Tape tape(false);
    BoundWeights w = bind_weights(tape, net.params(), view.slices);
    ForwardResult fwd = forward(tape, w, gene, batch);
    const double ce = tape.value(cross_entropy(fwd.logits, batch.labels, label_smoothing))[0];
    total += ce * static_cast<double>(batch.num_target_tokens());
    tokens += batch.num_target_tokens();
  }
  if (tokens == 0) throw DimensionError("validation set has no target tokens");
  return total / static_cast<double>(tokens);
}

void save_supernet(const std::string& path, const Supernet& net) {
  CheckpointData data;
  data.tensors = net.params().to_named();
  data.metadata["kind"] = "supernet";
  data.metadata["space_hash"] = hex_hash(space_hash(net.space()));
  data.metadata["space"] = encode_space(net.space());
  data.metadata["vocab"] = std::to_string(net.dims().vocab);
  data.metadata["max_positions"] = std::to_string(net.dims().max_positions);
  save_checkpoint(path, data);
}

Supernet load_supernet(const std::string& path, const SearchSpace& space) {
  CheckpointData data = load_checkpoint(path);
  const auto it = data.metadata.find("space_hash");
  if (it == data.metadata.end()) throw ConfigError(path + " is not a supernet checkpoint (no space hash)");
  const std::string expected = hex_hash(space_hash(space));
  if (it->second != expected) {
    throw ConfigError("supernet checkpoint " + path + " was trained on space " + it->second + ", not " + expected);
  }
  ModelDims dims{std::stoi(data.metadata.at("vocab")), std::stoi(data.metadata.at("max_positions"))};
  return Supernet(space, dims, ParamStore::from_named(std::move(data.tensors)));
}

}  // namespace automoe
