// scratch: calibrate the warm-start statistical property
#include <cstdio>

#include "agnn/trainer.hpp"

using namespace agnn;

int main() {
  struct Setup {
    int n;
    double p_in, p_out, noise;
    int ancestor_epochs, short_epochs;
    double l2, lr;
  };
  std::vector<Setup> setups = {
      {120, 0.15, 0.05, 1.2, 150, 20, 5e-4, 0.005},
      {150, 0.12, 0.04, 1.5, 200, 20, 5e-4, 0.005},
      {150, 0.12, 0.04, 2.0, 200, 20, 5e-4, 0.005},
      {90, 0.25, 0.03, 1.0, 150, 20, 5e-4, 0.005},
  };
  LayerSpec spec;
  spec.hidden_dim = 16;
  spec.attention_fn = AttentionKind::Gcn;
  spec.heads = 2;
  spec.aggregator = AggregatorKind::Sum;
  spec.combiner = CombinerKind::Identity;
  spec.activation = Activation::ReLU;
  ArchitectureDescriptor a;
  a.layers = {spec, spec};

  for (const auto& su : setups) {
    int wins = 0;
    double warm_sum = 0, fresh_sum = 0, anc_sum = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      DatasetBundle data = generate_sbm(su.n, 3, su.p_in, su.p_out, 3, su.noise, 100 + seed);
      ParameterRegistry reg;
      CompiledModel ancestor = build(a, 3, 3, 200 + seed);
      TrainConfig full;
      full.epochs = su.ancestor_epochs;
      full.warmup_epochs = su.ancestor_epochs;
      full.use_sharing = true;
      full.dropout = 0.0;
      full.l2 = su.l2;
      full.lr = su.lr;
      full.seed = 300 + seed;
      EvaluationRecord arec = train(ancestor, data, full, &reg, 1);
      anc_sum += arec.val_metric;

      TrainConfig short_run;
      short_run.epochs = su.short_epochs;
      short_run.warmup_epochs = su.short_epochs;
      short_run.dropout = 0.0;
      short_run.l2 = su.l2;
      short_run.lr = su.lr;
      short_run.seed = 400 + seed;

      CompiledModel warm = build(a, 3, 3, 500 + seed);
      TrainConfig warm_cfg = short_run;
      warm_cfg.use_sharing = true;
      EvaluationRecord wrec = train(warm, data, warm_cfg, &reg, 2);

      CompiledModel fresh = build(a, 3, 3, 500 + seed);
      EvaluationRecord frec = train(fresh, data, short_run, nullptr, 3);
      warm_sum += wrec.val_metric;
      fresh_sum += frec.val_metric;
      if (wrec.val_metric >= frec.val_metric) ++wins;
    }
    std::printf("n=%d p_in=%.2f p_out=%.2f noise=%.1f anc=%d short=%d -> wins %d/10, anc %.3f warm %.3f fresh %.3f\n",
                su.n, su.p_in, su.p_out, su.noise, su.ancestor_epochs, su.short_epochs, wins,
                anc_sum / 10, warm_sum / 10, fresh_sum / 10);
  }
  return 0;
}
