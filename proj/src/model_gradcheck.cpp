#include "ufcmil/model_gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ufcmil/losses.hpp"
#include "ufcmil/rng.hpp"
#include "ufcmil/synth.hpp"

namespace ufcmil {

std::string param_group(const std::string& name) {
  const auto first = name.find('.');
  const auto second = name.find('.', first + 1);
  return name.substr(first + 1, second == std::string::npos ? std::string::npos
                                                            : second - first - 1);
}

namespace {

// Distance in positive-class probability from the nearest PW kink: the hinge
// of each relu term and, for positive bags, the switch of the max.
double pw_kink_distance(const ForwardOutput& out, int label, double delta) {
  double dist = std::numeric_limits<double>::infinity();
  for (const auto& lv : out.levels) {
    std::vector<double> pos;
    for (std::size_t i = 0; i < lv.p_inst.rows(); ++i) pos.push_back(lv.p_inst(i, 1));
    if (label == 0) {
      for (double p : pos) dist = std::min(dist, std::abs(p - delta));
    } else {
      std::sort(pos.rbegin(), pos.rend());
      dist = std::min(dist, std::abs(1.0 - delta - pos[0]));
      if (pos.size() > 1) dist = std::min(dist, pos[0] - pos[1]);
    }
  }
  return dist;
}

}  // namespace

ModelGradCheck model_gradcheck(std::uint64_t seed, double h) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.levels = 2;
  cfg.hidden = 8;
  const LossConfig loss_cfg;

  ForwardOptions opt;
  opt.mode = Mode::kEval;
  opt.mask_gradient = MaskGradient::kSoft;

  // Redraw data and weights until every PW kink is clear of the probe steps.
  constexpr double kKinkMargin = 1e-2;
  constexpr std::size_t kMaxRedraws = 1000;
  std::vector<MultiResBag> bags;
  BasicParams<double> params;
  std::size_t redraws = 0;
  for (;; ++redraws) {
    if (redraws == kMaxRedraws)
      throw NumericError("gradcheck: no kink-free toy configuration found");
    const std::uint64_t draw_seed = redraws == 0 ? seed : splitmix64(seed ^ splitmix64(redraws));
    SynthConfig sc;
    sc.samples = 2;
    sc.dim = cfg.dim;
    sc.levels = cfg.levels;
    sc.grid_w = 2;
    sc.grid_h = 2;
    sc.pos_fraction = 0.5;
    sc.lesion_size = 1;
    sc.seed = draw_seed;
    bags = synth_bags(sc);
    params = init_params(cfg, draw_seed).cast<double>();

    double dist = std::numeric_limits<double>::infinity();
    for (const auto& bag : bags) {
      Tape<double> tape;
      ParamVars<double> pv(tape, params, false);
      const auto fv = model::forward_bag(tape, pv, bag, cfg, opt);
      dist = std::min(dist, pw_kink_distance(extract_output(fv), bag.label, loss_cfg.delta));
    }
    if (dist > kKinkMargin) break;
  }

  std::vector<BasicTensor<double>> inputs;
  for (const auto& e : params.entries()) inputs.push_back(e.second);

  MultiTensorFn<double> f = [&](Tape<double>& tape, std::span<const Var<double>> vars) {
    ParamVars<double> pv(params, std::vector<Var<double>>(vars.begin(), vars.end()));
    std::vector<Var<double>> losses;
    for (const auto& bag : bags) {
      auto fv = model::forward_bag(tape, pv, bag, cfg, opt);
      losses.push_back(total_loss(fv, bag.label, loss_cfg.delta, Phase::kMain));
    }
    return ad::sum_all(ad::concat_rows(losses));
  };
  const auto report = finite_diff_check<double>(f, inputs, h);

  ModelGradCheck out;
  out.max_rel_error = report.max_rel_error;
  out.worst_param = params.entries()[report.worst_input].first;
  out.worst_index = report.worst_index;
  out.worst_analytic = report.worst_analytic;
  out.worst_numeric = report.worst_numeric;
  out.parameters = params.total_elements();
  out.redraws = redraws;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string group = param_group(params.entries()[i].first);
    auto& g = out.per_group[group];
    g = std::max(g, report.per_input[i]);
    auto& gm = out.group_grad_max[group];
    for (double v : report.analytic[i].data()) gm = std::max(gm, std::abs(v));
  }
  return out;
}

}  // namespace ufcmil
