#!/usr/bin/env python3
"""
Command-line driver: TV denoising, inpainting, optical flow and wavelet
inpainting with overlapping domain decomposition.

    python main.py --app denoise --input clean.png --output out.png --mode seq

Settings are resolved as flags > --config file (KEY=value lines) >
TVDD_* environment variables (a local .env is loaded) > defaults.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

import decomp
import dualsolve
from corruption import corrupt, corrupted_preview
from decomp import DecompLayout
from exceptions import MissingInput, TVDDError
from grid import GridFunction
from images import load_image
from models import (Application, DecompMode, EnergyTrace, RunConfig, RunMode, RunSummary,
                    SolveControl, SurrogateNesting)
from problem import ProblemSpec, primal_recover
from storage import ArtifactStore

logger = logging.getLogger(__name__)

ENV_PREFIX = "TVDD_"

# config key -> RunConfig field
CONFIG_KEYS: Dict[str, str] = {
    "APP": "app",
    "INPUT": "input",
    "INPUT2": "input2",
    "OUTPUT": "output",
    "CORRUPTED_OUTPUT": "corrupted_output",
    "LAMBDA": "lam",
    "BETA": "beta",
    "MODE": "mode",
    "MX": "mx",
    "MY": "my",
    "OVERLAP": "overlap",
    "SIGMA": "sigma",
    "OUTER_ITERS": "outer_iters",
    "INNER_ITERS": "inner_iters",
    "NSUR": "nsur",
    "TAU_SUR": "tau_sur",
    "NESTING": "nesting",
    "WORKERS": "workers",
    "SEED": "seed",
    "NOISE_VAR": "noise_var",
    "MASK_PROB": "mask_prob",
    "ENERGY_CSV": "energy_csv",
    "LAYOUT_CSV": "layout_csv",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Overlapping domain decomposition for predual TV problems")
    parser.add_argument("--app", dest="app", choices=[a.value for a in Application], help="Application")
    parser.add_argument("--input", dest="input", help="Ground-truth image (first frame for optflow)")
    parser.add_argument("--input2", dest="input2", help="Second frame for optflow")
    parser.add_argument("--output", dest="output", help="Output image (flow color image for optflow)")
    parser.add_argument("--corrupted-output", dest="corrupted_output", help="Where to write the corrupted data")
    parser.add_argument("--lambda", dest="lam", type=float, help="Regularization weight")
    parser.add_argument("--beta", dest="beta", type=float, help="Coercivity shift of B = T*T + beta I")
    parser.add_argument("--mode", dest="mode", choices=[m.value for m in RunMode], help="Solver mode")
    parser.add_argument("--mx", dest="mx", type=int, help="Subdomains along the first axis")
    parser.add_argument("--my", dest="my", type=int, help="Subdomains along the second axis")
    parser.add_argument("--overlap", dest="overlap", type=int, help="Overlap r in pixels")
    parser.add_argument("--sigma", dest="sigma", type=float, help="Relaxation parameter")
    parser.add_argument("--outer-iters", dest="outer_iters", type=int, help="Outer iterations")
    parser.add_argument("--inner-iters", dest="inner_iters", type=int, help="Local solver iterations")
    parser.add_argument("--nsur", dest="nsur", type=int, help="Surrogate iterations (0 = direct local solve)")
    parser.add_argument("--tau-sur", dest="tau_sur", type=float, help="Surrogate parameter, must exceed ||B^-1||")
    parser.add_argument("--nesting", dest="nesting", choices=[n.value for n in SurrogateNesting],
                        help="Surrogate inside the decomposition or around it")
    parser.add_argument("--workers", dest="workers", type=int, help="Worker threads")
    parser.add_argument("--seed", dest="seed", type=int, help="Corruption seed")
    parser.add_argument("--noise-var", dest="noise_var", type=float, help="Gaussian noise variance (denoise)")
    parser.add_argument("--mask-prob", dest="mask_prob", type=float, help="Masking probability (inpaint)")
    parser.add_argument("--energy-csv", dest="energy_csv", help="Energy trace CSV")
    parser.add_argument("--layout-csv", dest="layout_csv", help="Subdomain weights and colors CSV")
    parser.add_argument("--config", dest="config", help="KEY=value config file")
    parser.add_argument("--log-level", dest="log_level", help="Logging level (default WARNING)")
    return parser


def load_config(argv: Optional[List[str]] = None) -> Tuple[RunConfig, str]:
    """Merge flags, config file and environment into a RunConfig"""
    args = build_parser().parse_args(argv)
    load_dotenv()

    values = {}
    for key, field in CONFIG_KEYS.items():
        env_value = os.getenv(ENV_PREFIX + key)
        if env_value is not None:
            values[field] = env_value

    if args.config:
        if not Path(args.config).exists():
            raise MissingInput(f"config file not found: {args.config}")
        for key, value in dotenv_values(args.config).items():
            key = key.upper().replace("-", "_")
            if key in CONFIG_KEYS and value is not None:
                values[CONFIG_KEYS[key]] = value
            else:
                logger.warning("ignoring unknown config key %s", key)

    for field in CONFIG_KEYS.values():
        flag_value = getattr(args, field)
        if flag_value is not None:
            values[field] = flag_value

    level = args.log_level or os.getenv(ENV_PREFIX + "LOG_LEVEL") or "WARNING"
    return RunConfig(**values), level.upper()


def _solve_global(config: RunConfig, spec: ProblemSpec) -> Tuple[GridFunction, EnergyTrace]:
    if spec.operator.is_local:
        control = SolveControl(
            max_iters=config.outer_iters * config.inner_iters,
            log_every=config.inner_iters,
            k_scale=config.inner_iters,
        )
        p, trace = dualsolve.solve(spec, control=control)
        return primal_recover(spec, p), trace
    # a global B^-1 is only ever handled by the surrogate iteration
    single = DecompLayout.build(spec.domain, (1,) * spec.domain.dims, config.overlap)
    result = decomp.run(spec, single, config.dd_config(DecompMode.SEQUENTIAL, 1))
    return result.u, result.trace


def _solve_decomposed(config: RunConfig, spec: ProblemSpec, layout: DecompLayout,
                      mode: DecompMode) -> Tuple[GridFunction, EnergyTrace]:
    result = decomp.run(spec, layout, config.dd_config(mode, layout.size))
    return result.u, result.trace


def run_application(config: RunConfig, store: Optional[ArtifactStore] = None) -> RunSummary:
    started = time.perf_counter()
    store = store or ArtifactStore()

    ground_truth = load_image(config.input)
    second_frame = None
    if config.app == Application.OPTFLOW:
        if config.input2 is None:
            raise MissingInput("optical flow needs a second frame (--input2)")
        second_frame = load_image(config.input2)

    g, operator = corrupt(config.app, ground_truth, config.corruption(), second_frame)
    spec = ProblemSpec.build(operator, g, config.lam_value, config.beta_value)
    # global mode only needs the layout for a requested dump
    layout = None
    if config.mode != RunMode.GLOBAL or config.layout_csv is not None:
        layout = DecompLayout.build(spec.domain, (config.mx, config.my), config.overlap)

    traces: Dict[str, EnergyTrace] = {}
    if config.mode == RunMode.GLOBAL:
        u, trace = _solve_global(config, spec)
    elif config.mode == RunMode.COMPARE:
        _, traces["glob_energy"] = _solve_global(config, spec)
        _, traces["ddpar_energy"] = _solve_decomposed(config, spec, layout, DecompMode.PARALLEL)
        u, trace = _solve_decomposed(config, spec, layout, DecompMode.SEQUENTIAL)
        traces["ddseq_energy"] = trace
    else:
        u, trace = _solve_decomposed(config, spec, layout, DecompMode(config.mode.value))

    output = Path(config.output)
    if config.app == Application.OPTFLOW:
        store.save_flow_color(u, output)
        store.save_flow(u, output.with_suffix(".csv"))
    else:
        store.save_image(u, output)

    corrupted_path = config.corrupted_output or output.with_name(f"{output.stem}_corrupted{output.suffix}")
    store.save_image(corrupted_preview(config.app, g, operator), corrupted_path)

    if config.energy_csv is not None:
        if config.mode == RunMode.COMPARE:
            store.save_comparison(traces, config.energy_csv)
        else:
            store.save_trace(trace, config.energy_csv)
    if config.layout_csv is not None:
        store.save_layout(layout, config.layout_csv)

    return RunSummary(
        app=config.app,
        mode=config.mode,
        final_energy=trace.final_energy,
        artifacts=list(store.written),
        elapsed_seconds=time.perf_counter() - started,
    )


def main(argv: Optional[List[str]] = None) -> int:
    try:
        config, level = load_config(argv)
    except (ValidationError, TVDDError) as e:
        print(f"❌ Invalid configuration: {e}")
        return 1

    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    print(f"🚀 {config.app.value}: {config.mode.value} mode, {config.outer_iters} outer iterations")
    try:
        summary = run_application(config)
    except (TVDDError, ValidationError, OSError) as e:
        print(f"❌ Run failed: {e}")
        return 1

    print(f"✅ Final energy: {summary.final_energy:.10g}")
    for path in summary.artifacts:
        print(f"   📄 {path}")
    print(f"⏱️  {summary.elapsed_seconds:.2f}s with {config.workers} worker(s)")
    if not summary.artifacts:
        print("⚠️  No artifacts were written")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
