from typing import List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import MpcConfig, RegretConfig
from .dmd_mpc import DmdMpcPlanner, PlanningProblem, default_sigma
from .env_config import list_env_names
from .envs import make_env
from .errors import ConfigError, DemoMpcError, ShapeError, WeightingModeError
from .regret import regret_check

# Initialize FastAPI app
app = FastAPI(
    title="DMD-MPC Planning API",
    description="Plans control sequences with dynamic mirror descent MPC and runs regret diagnostics",
    version="0.1.0"
)


# per-request caps on the (rollouts, horizon + 1, state) arrays a plan allocates
MAX_PLAN_HORIZON = 200
MAX_PLAN_ROLLOUTS = 5000
MAX_PLAN_ITERATIONS = 20


class PlanRequest(BaseModel):
    env: str
    state: List[float]
    horizon: int = Field(15, ge=1, le=MAX_PLAN_HORIZON)
    rollouts: int = Field(100, ge=1, le=MAX_PLAN_ROLLOUTS)
    objective: str = "cem"
    elite_fraction: float = 0.1
    alpha: float = 1.0
    temperature: float = 1.0
    iterations: int = Field(1, ge=1, le=MAX_PLAN_ITERATIONS)
    seed: Optional[int] = None


class RegretRequest(BaseModel):
    rounds: int = Field(1000, ge=1, le=100_000)
    step_scale: float = 0.5
    drift: float = 0.0
    dim: int = 1
    seed: int = 0


def _status_for(err: DemoMpcError) -> int:
    return 422 if isinstance(err, (ConfigError, ShapeError, WeightingModeError)) else 500


@app.get("/")
async def root():
    """Root endpoint"""
    return {"message": "DMD-MPC Planning API", "status": "running"}


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "service": "demo-mpc"}


@app.get("/envs")
async def environments():
    """Registered environments and their specs"""
    return {name: make_env(name).spec.to_dict() for name in list_env_names()}


@app.post("/plan")
def plan(request: PlanRequest):
    """One planning round on the exact model from a box-midpoint warm start"""
    try:
        env = make_env(request.env)
        config = MpcConfig(
            horizon=request.horizon,
            rollouts=request.rollouts,
            objective=request.objective,
            elite_fraction=request.elite_fraction,
            alpha=request.alpha,
            temperature=request.temperature,
            iterations=request.iterations,
            shift="left_shift",
        )
        x = np.asarray(request.state, dtype=np.float64)
        if x.shape != (env.spec.state_dim,):
            raise ShapeError("state", (env.spec.state_dim,), x.shape)
        planner = DmdMpcPlanner(PlanningProblem.for_env(env), config, default_sigma(env.spec, config.sigma_scale))
        result = planner.plan(x, request.seed)
        costs = result.batch.costs
        finite = costs[np.isfinite(costs)]
        return {
            "env": request.env,
            "action": result.action.tolist(),
            "plan_mean": result.plan.mean.tolist(),
            "costs": {
                "min": float(finite.min()) if finite.size else None,
                "mean": float(finite.mean()) if finite.size else None,
                "diverged": int(costs.size - finite.size),
            },
        }
    except DemoMpcError as err:
        raise HTTPException(status_code=_status_for(err), detail=str(err))


@app.post("/regret-check")
def check_regret(request: RegretRequest):
    """Run the convex tracking toy and report both inequalities"""
    try:
        config = RegretConfig(rounds=request.rounds, step_scale=request.step_scale,
                              drift=request.drift, dim=request.dim,
                              shift="translate" if request.drift else "identity")
        result = regret_check(config, request.seed)
        return {
            "bound_holds": result["bound_holds"],
            "lemma_holds": result["lemma_holds"],
            "final_regret": result["final_regret"],
            "final_bound": result["final_bound"],
            "min_margin": result["min_margin"],
        }
    except DemoMpcError as err:
        raise HTTPException(status_code=_status_for(err), detail=str(err))


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
