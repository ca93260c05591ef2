# %% [markdown]
# # A reduced benchmark
#
# Three repetitions of the delay and parity tasks for HqW and LqW, plus one
# predicted test trajectory with its 95% credible band.  The full matrix is
# produced by `qwiener bench --config configs/bench_table1.json`.

# %%
from qwiener.bench import ModelSpec, TaskSpec, run_experiment, run_rep
from qwiener.plotting import emit_plot

# %%
tasks = [TaskSpec("delay", 2), TaskSpec("parity", 2)]
for kind in ("hqw", "lqw"):
    for task in tasks:
        res = run_experiment(ModelSpec(kind, 8), task, reps=3, seed=0)
        print(f"{res.model.label:8s} {task.label:14s} {res.median:.4f}")

# %%
rep = run_rep(ModelSpec("hqw", 8), TaskSpec("narma10"), seed=5, keep=True)
print("NARMA10 RMSE:", rep.rmse)
emit_plot({"truth": rep.truth, "prediction": rep.prediction},
          {"prediction": (rep.lower, rep.upper)}, "narma10.svg", title="HqW(8) NARMA10")
