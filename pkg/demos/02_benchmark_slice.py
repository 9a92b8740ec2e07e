# %% [markdown]
# # A small slice of the simulation benchmark
#
# Calibrate Scenario 2, then run a few replicates at three interaction
# strengths and compare the DR-learner test with the two regression
# baselines. The full grid is available from the command line:
# `tehdr benchmark --out results/ [--fast]`.

# %%
from tehdr import Config, calibrate, run_benchmark
from tehdr.config import LearnerConfig, RankingConfig, SimbenchConfig, TestConfig

cal = calibrate(2, seed=0, reps=5000, calib_n=20_000)
for row in cal.grid():
    print(f"multiplier {row['multiplier']:.1f}: beta1={row['beta1']:.3f} beta0={row['beta0']:.3f}")

# %%
cfg = Config(
    learners=LearnerConfig(members=("lasso",)),
    test=TestConfig(B=499),
    ranking=RankingConfig(ntree=100),
    simbench=SimbenchConfig(scenarios=(2,), multipliers=(0.0, 1.0, 2.0), replicates=10, n=500),
)
report = run_benchmark(cfg, seed=1, calibrations={2: cal}, progress=lambda i, k: None)

# %% [markdown]
# Rejection rates at alpha 0.10 and how often X14 is ranked first.

# %%
for agg in report.aggregates:
    if "rejection_rate" not in agg:
        continue
    print(f"{agg['method']:>13}  x{agg['multiplier']:.1f}  reject={agg['rejection_rate']:.2f}  "
          f"top=X14: {agg['p_top_in_truth']:.2f}  mean MSE={agg['mean_mse']:.3f}")
