import sys; sys.path.insert(0, "/root/pkg/src")
import math, time, json
from qhedge import *
from qhedge.reference import x_boundary_values

mu, sigma, T, K, R = 0.01875, 0.25, 1.0, 30.0, 0.05
model = MarketModel.borrow_spread(mu, sigma, T, R)
put = Payoff.put(K)
L = driver_lipschitz(model.driver)
params = SchemeParams(theta=0.2, M=1.0, picard_tol=1e-5, lipschitz_L=L)
bnd3 = lambda t, x, p: x_boundary_values(t, x, p, model, put)
out = {}

delta = 0.005
t0 = time.time()
tg = build_time_grid(T, delta)
xg = build_xgrid(math.log(10), math.log(45), delta)
cs = build_paper_control_set(delta, sigma)
surf = pcpt_backward_solve(model, put, tg, xg, cs, params, bnd3, keep="initial")
out["compliant"] = {
    "seconds": time.time() - t0,
    "max_iter": surf.max_picard_iterations,
    "per_step_head": [d.max_iterations for d in surf.diagnostics[:5]],
    "per_step_tail": [d.max_iterations for d in surf.diagnostics[-5:]],
    "v_ln30": {str(p): surf.value(0.0, math.log(30), p) for p in (0.05, 0.5, 0.8, 0.95)},
}
print("compliant done", out["compliant"]["seconds"], out["compliant"]["max_iter"], flush=True)

t0 = time.time()
tg2 = build_time_grid(T, 0.1)
surf2 = pcpt_backward_solve(model, put, tg2, xg, cs, params, bnd3, unchecked=True, keep="initial")
out["violating"] = {
    "seconds": time.time() - t0,
    "max_iter": surf2.max_picard_iterations,
    "per_step": [d.max_iterations for d in surf2.diagnostics],
    "v_ln37": {str(p): surf2.value(0.0, math.log(37), p) for p in (0.5, 0.8, 0.95)},
}
print("violating done", out["violating"]["seconds"], out["violating"]["max_iter"], flush=True)
with open("/root/pkg/.scratch/crit5.json", "w") as f:
    json.dump(out, f, indent=1)
