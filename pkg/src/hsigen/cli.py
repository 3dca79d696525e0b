"""Command-line interface: dataset synthesis, training, generation, the
multi-human pipeline, evaluation, mesh export, and vocabulary listing.

Report-producing commands write delimited output (CSV) and render the
matching matplotlib figures next to it.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import body, graphs, pla, synth, textparse
from . import generator as gen
from . import optimize as opt
from .metrics import MetricsError, contact_score, diversity, non_collision_score
from .pipeline import (Interaction, RunConfig, generate_interaction, load_run_config,
                       run_mhsi, write_manifest)
from .scene import global_scene_graph, load_scene


def _add_config_arg(sub):
    sub.add_argument("--config", help="run configuration YAML")


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return RunConfig()


def cmd_synth_data(args) -> int:
    config = synth.SynthConfig(n_samples=args.n)
    ds = synth.synth_dataset(config, seed=args.seed)
    synth.save_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples ({ds.skipped} skipped) to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = synth.load_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = args.log or str(out.with_suffix(".train_log.csv"))
    config = gen.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                             lr=args.lr, seed=args.seed, log_path=log_path)
    t0 = time.time()
    model, log = gen.train(ds.triples(), config)
    gen.save_checkpoint(model, out, meta={"samples": len(ds.samples),
                                          "epochs": args.epochs,
                                          "wall_seconds": time.time() - t0})
    from . import viz
    viz.plot_train_log(log, out.with_suffix(".train_loss.png"))
    print(f"trained on {len(ds.samples)} samples in {time.time() - t0:.1f}s; "
          f"final loss {log[-1]['loss']:.5f}; checkpoint at {out}")
    return 0


def _load_model(args) -> gen.InteractionVAE:
    model, _ = gen.load_checkpoint(args.ckpt)
    return model


def _read_text(args) -> str:
    if args.text_file:
        return Path(args.text_file).read_text(encoding="utf-8").strip()
    if args.text:
        return args.text
    raise SystemExit("one of --text or --text-file is required")


def _write_outputs(out_dir: Path, scene, interactions: list[Interaction]) -> None:
    from . import viz

    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(interactions, out_dir / "manifest.json")
    meshes, flags = [], []
    for inter in interactions:
        if inter.mesh is None:
            continue
        body.export_mesh_obj(inter.mesh, out_dir / f"body_{inter.person_index}.obj")
        if inter.curve:
            opt.write_loss_curve(inter.curve,
                                 out_dir / f"losses_{inter.person_index}.csv")
            viz.plot_loss_curves(inter.curve,
                                 out_dir / f"losses_{inter.person_index}.png")
        meshes.append(inter.mesh)
        flags.append(inter.accepted)
    if meshes:
        viz.render_interaction(scene, meshes, out_dir / "render.png",
                               title=interactions[0].text, accepted=flags)


def cmd_generate(args) -> int:
    scene = load_scene(args.scene)
    model = _load_model(args)
    text = _read_text(args)
    inter = generate_interaction(scene, text, args.seed, model, _run_config(args))
    _write_outputs(Path(args.out), scene, [inter])
    print(f"accepted={inter.accepted} total_loss={inter.total_loss:.5f} "
          f"losses={ {k: round(v, 6) for k, v in inter.losses.items()} }")
    return 0


def cmd_mhsi(args) -> int:
    scene = load_scene(args.scene)
    model = _load_model(args)
    text = _read_text(args)
    results = run_mhsi(scene, text, args.seed, model, _run_config(args))
    _write_outputs(Path(args.out), scene, results)
    for inter in results:
        status = "error" if inter.error else ("accepted" if inter.accepted else "rejected")
        print(f"person {inter.person_index}: {status} "
              f"total={inter.total_loss if inter.params else float('nan'):.5f} "
              f"{inter.error or ''}")
    return 0


def cmd_evaluate(args) -> int:
    from . import viz

    model = _load_model(args)
    config = _run_config(args)
    prompts = synth.load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = min(args.n, len(prompts.samples)) if args.n else len(prompts.samples)

    rows = []
    all_params = []
    for i, sample in enumerate(prompts.samples[:n]):
        row = {"index": i, "scene": sample.scene.name, "text": sample.text}
        try:
            inter = generate_interaction(sample.scene, sample.text,
                                         args.seed + i, model, config)
            row["contact"] = contact_score(inter.mesh, sample.scene,
                                           eps=config.contact_eps)
            row["non_collision"] = non_collision_score(inter.mesh, sample.scene)
            row["total_loss"] = inter.total_loss
            row["accepted"] = inter.accepted
            row["improved"] = inter.improved
            all_params.append(inter.params)
        except (MetricsError, graphs.GraphError, opt.OptimizeError) as exc:
            row["error"] = str(exc)
        rows.append(row)
        print(f"[{i + 1}/{n}] contact={row.get('contact')} "
              f"non_collision={row.get('non_collision')}")

    fields = ["index", "scene", "text", "contact", "non_collision",
              "total_loss", "accepted", "improved", "error"]
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)

    scored = [r for r in rows if "contact" in r]
    summary = {
        "n": len(rows),
        "mean_contact": float(np.mean([r["contact"] for r in scored])) if scored else float("nan"),
        "mean_non_collision": float(np.mean([r["non_collision"] for r in scored])) if scored else float("nan"),
    }
    k = min(args.k, len(all_params))
    if k >= 2 and len(all_params) >= k:
        entropy, csize = diversity(all_params, k, seed=0)
        summary["entropy_bits"] = entropy
        summary["cluster_size"] = csize
        summary["k"] = k
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    viz.plot_metrics(scored, summary, out_dir / "metrics.png")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_export_mesh(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    entry = manifest["interactions"][args.index]
    if "params" not in entry:
        raise SystemExit(f"interaction {args.index} has no body (error entry)")
    params = body.BodyParams.from_dict(entry["params"])
    parsed = textparse.parse_description(entry["text"])[entry["person_index"]]
    labels = body.assign_contact_labels([(a.lemma, a.side) for a in parsed.actions])
    mesh = body.body_mesh(params).with_contact(labels)
    body.export_mesh_obj(mesh, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_actions(args) -> int:
    groups = pla._load_groups()
    for name, group in groups.items():
        if args.part and args.part not in (name, *pla.SIDED_GROUPS.get(name, ())):
            continue
        sided = " (left/right)" if group["sided"] else ""
        print(f"{name}{sided}: {', '.join(group['actions'])}")
    return 0


def cmd_graph(args) -> int:
    scene = load_scene(args.scene)
    gsg = global_scene_graph(scene)
    text = graphs.graph_to_text(gsg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsigen",
        description="Text-controlled human-scene interaction generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the generator on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate one interaction")
    p.add_argument("--scene", required=True)
    p.add_argument("--text")
    p.add_argument("--text-file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mhsi", help="multi-person generation")
    p.add_argument("--scene", required=True)
    p.add_argument("--text")
    p.add_argument("--text-file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_mhsi)

    p = sub.add_parser("evaluate", help="score generations over a prompt set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset dir used as prompts")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=0, help="limit prompt count")
    p.add_argument("--k", type=int, default=8, help="diversity cluster count")
    p.add_argument("--seed", type=int, default=1000)
    _add_config_arg(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-mesh", help="export a manifest body as OBJ")
    p.add_argument("--manifest", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_mesh)

    p = sub.add_parser("actions", help="list the action vocabulary per part")
    p.add_argument("--part")
    p.set_defaults(func=cmd_actions)

    p = sub.add_parser("graph", help="print the rule-derived global scene graph")
    p.add_argument("--scene", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except textparse.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
