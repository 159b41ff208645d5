"""Command line interface."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import cde, datasets, experiments, features, paths, signature


def _load_path(filename: str) -> paths.Path:
    with open(filename, "rb") as fh:
        head = fh.read(8)
        fh.seek(0)
        data = fh.read()
    if head == b"SSMPATH1":
        return paths.path_from_binary(data)
    return paths.path_from_json(data.decode())


def _cmd_gen_data(args) -> int:
    spec = datasets.DatasetSpec(
        num_samples=args.samples, d=args.dim, num_steps=args.steps, seed=args.seed
    )
    ds = datasets.gen_dataset(spec)
    datasets.save_dataset(ds, args.out)
    print(
        json.dumps(
            {
                "out": args.out,
                "samples": spec.num_samples,
                "scale": ds.scale,
                "target_variance": float(np.var(ds.targets)),
            }
        )
    )
    return 0


def _cmd_sig(args) -> int:
    p = _load_path(args.input)
    s, t = args.interval
    sig = signature.signature(p, s, t, args.depth)
    print(signature.to_json(sig))
    return 0


def _cmd_solve(args) -> int:
    with open(args.params) as fh:
        params = cde.params_from_json(fh.read())
    omega = _load_path(args.omega)
    xi = _load_path(args.xi) if args.xi else omega
    x0 = np.asarray(json.loads(args.x0), dtype=np.float64)
    if args.model == "dense":
        traj = cde.solve_dense(params, omega, xi, x0)
    elif args.model == "diagonal":
        traj = cde.solve_diagonal(params, omega, xi, x0)
    else:
        raise paths.DomainError(f"unknown model {args.model!r}")
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(paths.to_binary(paths.from_values(traj - traj[0])))
    print(json.dumps({"final_state": traj[-1].tolist()}))
    return 0


def _cmd_train(args) -> int:
    with open(args.config) as fh:
        obj = json.load(fh)
    dataset = datasets.gen_dataset(datasets.DatasetSpec(**obj["dataset"]))
    record = experiments.train_model(experiments.TrainConfig(**obj["config"]), dataset)
    print(record.to_json_line())
    return 0


def _cmd_suite(args) -> int:
    report = experiments.run_suite(args.manifest)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def _cmd_kernel(args) -> int:
    with open(args.pair) as fh:
        obj = json.load(fh)

    def driver_set(side):
        omega = paths.path_from_json(json.dumps(side["omega"]))
        xi = paths.path_from_json(json.dumps(side["xi"])) if "xi" in side else omega
        x0 = np.asarray(side.get("x0", [1.0]), dtype=np.float64)
        return omega, xi, x0

    ox, xx, x0x = driver_set(obj["x"])
    oy, xy, x0y = driver_set(obj["y"])
    K = features.kernel_goursat(ox, xx, x0x, oy, xy, x0y)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(paths.to_binary(paths.Path(
                paths.Grid(K.shape[0] - 1), K - K[0], basepointed=False
            )))
    print(json.dumps({"kernel_final": float(K[-1, -1])}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lincde",
        description="Linear CDE solvers, signatures, kernels, and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an area/volume dataset")
    p.add_argument("--dim", type=int, required=True, choices=(2, 3))
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("sig", help="truncated signature of a stored path")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--interval", type=float, nargs=2, default=(0.0, 1.0))
    p.set_defaults(func=_cmd_sig)

    p = sub.add_parser("solve", help="solve a linear CDE on stored drivers")
    p.add_argument("--model", required=True, choices=("dense", "diagonal"))
    p.add_argument("--params", required=True)
    p.add_argument("--omega", required=True)
    p.add_argument("--xi")
    p.add_argument("--x0", default="[1.0]")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("train", help="train one benchmark configuration")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("suite", help="run a manifest of benchmark configs")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("kernel", help="kernel surface for a pair of driver sets")
    p.add_argument("--pair", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_kernel)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
