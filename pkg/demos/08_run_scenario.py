# %% [markdown]
# # Whole pipeline from a scenario file
#
# The same run the command line performs:
# `compute-oversight report --scenario desk-mix --out out/desk-mix`.

# %%
import tempfile
from pathlib import Path

from compute_oversight.scenario import bundled_scenarios, format_summary, load_scenario, run_pipeline

scenario = load_scenario(bundled_scenarios()["desk-mix"])
with tempfile.TemporaryDirectory() as out:
    result = run_pipeline(scenario, out)
    print(format_summary(result.summary))
    print(sorted(p.name for p in Path(out).iterdir()))
    for report in sorted((Path(out) / "reports").iterdir()):
        print(report.name, report.read_text()[:160], "...")
