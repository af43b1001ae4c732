import argparse
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import questionary
from colorama import Fore, Style, init
from dotenv import load_dotenv
from pydantic import ValidationError
from tabulate import tabulate

from scaf.align.dtw import realign_rows, realign_sampled, resample_rows
from scaf.attacks.cpa import accumulated_key_rank, cpa
from scaf.attacks.diagnostics import device_outliers
from scaf.attacks.dom import dom_poi
from scaf.attacks.templates import (
    confusion_matrix,
    fit_templates,
    template_accuracy,
    template_classify,
)
from scaf.data.io import load_traces, write_traces
from scaf.data.models import Architecture, GroupMode, LeakageModel, Method, SynthConfig, TrainConfig
from scaf.data.traces import TraceMatrix
from scaf.errors import RangeError, ScafError
from scaf.nn.network import init_model
from scaf.nn.serialize import load_model, save_model
from scaf.nn.train import train
from scaf.pca.model import fit as fit_pca
from scaf.pca.model import load_pca, project, save_pca
from scaf.pipeline.methods import METHOD_ORDER
from scaf.pipeline.report import AttackReport, report_emit
from scaf.pipeline.runner import cross_matrix, load_pipeline_config, run
from scaf.synth.generator import apply_shifts, draw_shifts, make_device_profiles, synth_dataset
from scaf.utils.display import (
    print_attack_report,
    print_confusion,
    print_method_summaries,
    print_outlier_counts,
    print_ranked_keys,
    print_train_report,
)
from scaf.utils.progress import progress

# Colorama initialization
init(autoreset=True)

# Largest class count for which a confusion matrix is printed in full
MAX_PRINTED_CLASSES = 16


def load_environment_variables(env_file: Optional[str] = None) -> None:
    """
    Load environment variables from a .env file.

    Order of precedence:
    1. Custom path specified via env_file parameter
    2. User's home directory (~/.scaf)
    3. Current working directory (.env)

    Recognised variables are SCAF_SEED (default seed of the synth and train
    commands) and SCAF_OUTPUT_DIR (default report directory of the pipeline).
    """
    if env_file:
        env_path = Path(env_file)
        if not env_path.exists():
            print(f"{Fore.RED}Warning: Environment file {env_file} not found.{Style.RESET_ALL}")
        else:
            load_dotenv(dotenv_path=env_path)
            return

    home_env_path = Path.home() / ".scaf"
    if home_env_path.exists():
        load_dotenv(dotenv_path=home_env_path)
        return

    if Path(".env").exists():
        load_dotenv()


def default_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    return int(os.environ.get("SCAF_SEED", "0"))


def with_progress(func: Callable[..., Any], *args, **kwargs) -> Any:
    """Run ``func`` with the live stage display shown."""
    progress.start()
    try:
        return func(*args, **kwargs)
    except Exception:
        progress.mark_failed()
        raise
    finally:
        progress.stop()


def _print_set(name: str, traces: TraceMatrix, path: Path) -> None:
    print(
        f"{Fore.GREEN}Wrote {name}{Style.RESET_ALL} {Fore.CYAN}{path}{Style.RESET_ALL}: "
        f"{traces.n_traces} traces x {traces.trace_length} samples, devices {traces.devices()}"
    )


##### Synth #####
def cmd_synth(args: argparse.Namespace) -> int:
    seed = default_seed(args.seed)
    profiles = make_device_profiles(
        args.devices,
        trace_length=args.length,
        leak_strength=args.leak_strength,
        noise_sigma=args.noise,
        gain_spread=args.gain_spread,
        drift_sigma=args.drift,
        seed=seed,
    )
    cfg = SynthConfig(
        n_traces_per_device=args.traces_per_device,
        trace_length=args.length,
        devices=profiles,
        random_plaintext=args.random_plaintext,
        fixed_key_byte=args.fixed_key,
        leakage_model=args.leakage,
        seed=seed,
    )
    traces = with_progress(synth_dataset, cfg)
    if args.misalign:
        if args.misalign >= args.length:
            raise RangeError(f"--misalign must be below --length ({args.length}), got {args.misalign}")
        shifts = draw_shifts(traces.n_traces, args.misalign, rng=[seed, 1])
        traces = traces.with_samples(apply_shifts(traces.samples, shifts))

    manifest: Dict[str, object] = {
        "seed": seed,
        "leakage_model": cfg.leakage_model,
        "random_plaintext": cfg.random_plaintext,
        "fixed_plaintext_byte": cfg.fixed_plaintext_byte,
        "fixed_key_byte": "" if cfg.fixed_key_byte is None else cfg.fixed_key_byte,
        "max_shift": args.misalign,
    }
    for profile in profiles:
        for field, value in profile.model_dump().items():
            if field != "device_id":
                manifest[f"device_{profile.device_id}_{field}"] = value
    path = write_traces(args.out, traces, manifest)
    _print_set("trace set", traces, path)
    return 0


##### Align #####
def cmd_align(args: argparse.Namespace) -> int:
    traces = load_traces(args.input)
    if not 0 <= args.reference_index < traces.n_traces:
        raise RangeError(f"--reference-index must be in [0, {traces.n_traces}), got {args.reference_index}")
    alignment = with_progress(
        realign_sampled, traces, traces.samples[args.reference_index], args.sample_rows, args.band
    )
    aligned = alignment.aligned
    if args.resample:
        aligned = aligned.with_samples(resample_rows(aligned.samples, args.resample))
    path = write_traces(
        args.out,
        aligned,
        {
            "reference_index": args.reference_index,
            "aligned_width": alignment.width,
            "resample_length": args.resample or "",
        },
    )
    reference_path = Path(args.out).with_suffix(".reference.npy")
    np.save(reference_path, alignment.modified_reference)
    _print_set("aligned set", aligned, path)
    print(f"Modified reference ({alignment.width} samples): {Fore.CYAN}{reference_path}{Style.RESET_ALL}")
    return 0


##### PCA #####
def cmd_pca_fit(args: argparse.Namespace) -> int:
    traces = load_traces(args.input)
    model = fit_pca(traces, args.components)
    path = save_pca(args.out, model)
    print(
        f"{Fore.GREEN}Wrote PCA model{Style.RESET_ALL} {Fore.CYAN}{path}{Style.RESET_ALL}: "
        f"{model.n_features} -> {model.n_components} components"
    )
    if args.plot:
        from scaf.utils.visualize import plot_explained_variance

        print(f"Explained variance plot: {plot_explained_variance(model, args.plot)}")
    return 0


def cmd_pca_project(args: argparse.Namespace) -> int:
    model = load_pca(args.model)
    projected = project(model, load_traces(args.input))
    path = write_traces(args.out, projected, {"pca_components": model.n_components})
    _print_set("projected set", projected, path)
    return 0


##### Train #####
def cmd_train(args: argparse.Namespace) -> int:
    train_set = load_traces(args.input)
    val_set = load_traces(args.val) if args.val else None
    pca = None
    if args.pca:
        pca = load_pca(args.pca)
        train_set = project(pca, train_set)
        val_set = project(pca, val_set) if val_set is not None else None

    overrides: Dict[str, Any] = {
        "batch_size": args.batch,
        "l2_lambda": args.l2,
        "seed": default_seed(args.seed),
        "augment_copies": args.augment,
        "augment_sigma": args.augment_sigma,
    }
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = TrainConfig.for_architecture(args.arch, **overrides)
    model = init_model(args.arch, train_set.trace_length, seed=cfg.seed)
    report = with_progress(train, model, train_set, val_set, cfg)
    print_train_report(report)
    path = save_model(args.out, model, pca=pca)
    print(f"{Fore.GREEN}Wrote model{Style.RESET_ALL} {Fore.CYAN}{path}{Style.RESET_ALL}")
    return 0


##### Attacks #####
def cmd_attack_cpa(args: argparse.Namespace) -> int:
    traces = load_traces(args.input)
    result = cpa(traces, plaintext_byte=args.plaintext)
    frame = result.to_frame()
    keys = np.unique(traces.key_bytes)
    print_ranked_keys(frame, true_key=int(keys[0]) if keys.size == 1 else None, top=args.top)
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.csv, index=False)
        print(f"Ranking written to {Fore.CYAN}{args.csv}{Style.RESET_ALL}")
    return 0


def cmd_attack_template(args: argparse.Namespace) -> int:
    train_set = load_traces(args.train)
    test_set = load_traces(args.test)
    pois = dom_poi(train_set, args.pois)
    print(f"Points of interest: {Fore.CYAN}{list(pois.indices)}{Style.RESET_ALL}")
    templates = fit_templates(train_set, pois)
    predicted = template_classify(templates, test_set)
    confusion = confusion_matrix(test_set.key_bytes, predicted, classes=templates.classes)
    if len(templates) <= MAX_PRINTED_CLASSES:
        print_confusion(confusion)
    print(f"Template accuracy: {Fore.GREEN}{template_accuracy(templates, test_set) * 100:.2f}%{Style.RESET_ALL}")
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        confusion.to_csv(args.csv)
        print(f"Confusion matrix written to {Fore.CYAN}{args.csv}{Style.RESET_ALL}")
    if args.plot:
        if len(pois) != 2:
            print(f"{Fore.YELLOW}Ellipse plot needs exactly 2 POIs, skipped{Style.RESET_ALL}")
        else:
            from scaf.utils.visualize import plot_template_ellipses

            classes = [int(c) for c in templates.classes[: args.plot_classes]]
            print(f"Template ellipses: {plot_template_ellipses(templates, classes, args.plot)}")
    return 0


def cmd_attack_model(args: argparse.Namespace) -> int:
    """Single-trace and accumulated attack with a saved classifier."""
    attack = load_model(args.model)
    traces = load_traces(args.input)
    if attack.reference is not None:
        traces = with_progress(realign_rows, traces, attack.reference)
        if attack.resample_length:
            traces = traces.with_samples(resample_rows(traces.samples, attack.resample_length))
    if attack.pca is not None:
        traces = project(attack.pca, traces)
    accuracy = attack.network.accuracy(traces)
    print(f"Single-trace accuracy: {Fore.GREEN}{accuracy * 100:.2f}%{Style.RESET_ALL}")

    keys = np.unique(traces.key_bytes)
    if keys.size == 1:
        ranks = accumulated_key_rank(attack.network.predict_proba(traces), int(keys[0]))
        hit = np.flatnonzero(ranks == 1)
        rows = [[n, int(ranks[n - 1])] for n in (1, 2, 5, 10, 20, 50, 100) if n <= ranks.size]
        print(tabulate(rows, headers=[f"{Fore.WHITE}Traces", "Key rank"], tablefmt="grid"))
        if hit.size:
            print(f"Key 0x{int(keys[0]):02X} ranked first after {Fore.GREEN}{hit[0] + 1}{Style.RESET_ALL} trace(s)")
    return 0


##### Diagnostics #####
def cmd_diag_outliers(args: argparse.Namespace) -> int:
    traces = load_traces(args.input)
    table = device_outliers(traces, exclude_self=args.exclude_self)
    print_outlier_counts(table)
    if args.plot:
        from scaf.utils.visualize import plot_device_boxplot

        print(f"Device boxplot: {plot_device_boxplot(traces, args.plot)}")
    return 0


##### Pipeline #####
def _output_dir(args: argparse.Namespace, default: Path) -> Path:
    if args.out:
        return Path(args.out)
    if env_dir := os.environ.get("SCAF_OUTPUT_DIR"):
        return Path(env_dir)
    return default


def _emit(report: AttackReport, out_dir: Path, plot: bool) -> None:
    for path in report_emit(report, out_dir):
        print(f"  {Fore.CYAN}{path}{Style.RESET_ALL}")
    if plot:
        from scaf.utils.visualize import plot_accuracy_heatmap

        print(f"  {Fore.CYAN}{plot_accuracy_heatmap(report, out_dir / 'accuracy_heatmap.png')}{Style.RESET_ALL}")


def cmd_pipeline_run(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, {"method": args.method})
    report = with_progress(run, cfg, model_path=args.save_model)
    print_attack_report(report)
    _emit(report, _output_dir(args, cfg.output_dir), args.plot)
    return 0


def select_methods(methods: Optional[str]) -> Optional[List[str]]:
    """Methods from --methods, else an interactive checkbox (None when cancelled)."""
    if methods:
        return [m.strip() for m in methods.split(",") if m.strip()]
    choices = questionary.checkbox(
        "Select the attack methods to compare.",
        choices=[questionary.Choice(str(display), value=value) for display, value in METHOD_ORDER],
        instruction="\n\nInstructions: \n1. Press Space to select/unselect methods.\n2. Press 'a' to select/unselect all.\n3. Press Enter when done.\n",
        validate=lambda x: len(x) > 0 or "You must select at least one method.",
        style=questionary.Style(
            [
                ("checkbox-selected", "fg:green"),
                ("selected", "fg:green noinherit"),
                ("highlighted", "noinherit"),
                ("pointer", "noinherit"),
            ]
        ),
    ).ask()
    return choices or None


def cmd_pipeline_matrix(args: argparse.Namespace) -> int:
    overrides: Dict[str, Any] = {"n_train_devices": args.groups}
    if args.leave_one_out:
        overrides["group_mode"] = GroupMode.LEAVE_ONE_OUT.value
    cfg = load_pipeline_config(args.config, overrides)

    if args.methods or not sys.stdin.isatty():
        methods = select_methods(args.methods) if args.methods else [cfg.method.value]
    else:
        methods = select_methods(None)
    if not methods:
        print("\n\nInterrupt received. Exiting...")
        return 0
    print(f"\nSelected methods: {', '.join(Fore.GREEN + m + Style.RESET_ALL for m in methods)}\n")

    out_dir = _output_dir(args, cfg.output_dir)
    reports: Dict[str, AttackReport] = {}
    for name in methods:
        method = Method(name)
        method_cfg = cfg.model_copy(update={"method": method})
        report = with_progress(cross_matrix, method_cfg)
        print_attack_report(report)
        _emit(report, out_dir / method.value, args.plot)
        reports[method.value] = report
    if len(reports) > 1:
        print_method_summaries(reports)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Profiled cross-device power side-channel attacks",
        epilog=("Environment variables (SCAF_SEED, SCAF_OUTPUT_DIR) can be set in: "
                "(1) a file specified with --env-file, "
                "(2) ~/.scaf in your home directory, or "
                "(3) .env in the current directory."),
    )
    parser.add_argument(
        "--env-file",
        type=str,
        help="Path to a custom .env file. If not specified, will check ~/.scaf then .env in the current directory",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Generate a synthetic multi-device trace set")
    synth.add_argument("--devices", type=int, default=5, help="Number of devices. Defaults to 5")
    synth.add_argument("--traces-per-device", type=int, default=2560, help="Traces per device. Defaults to 2560")
    synth.add_argument("--length", type=int, default=512, help="Samples per trace. Defaults to 512")
    synth.add_argument("--noise", type=float, default=1.0, help="Gaussian noise sigma. Defaults to 1.0")
    synth.add_argument("--leak-strength", type=float, default=1.0, help="Leak amplitude. Defaults to 1.0")
    synth.add_argument("--gain-spread", type=float, default=0.10, help="Device gain spread. Defaults to 0.10")
    synth.add_argument("--drift", type=float, default=0.0, help="Per-trace baseline drift sigma. Defaults to 0")
    synth.add_argument("--leakage", type=LeakageModel, choices=list(LeakageModel), default=LeakageModel.BITS)
    synth.add_argument("--random-plaintext", action="store_true", help="Random plaintext byte per trace")
    synth.add_argument("--fixed-key", type=int, help="Use this key byte for every trace")
    synth.add_argument("--misalign", type=int, default=0, help="Max rigid shift in samples. Defaults to 0")
    synth.add_argument("--seed", type=int, help="Random seed. Defaults to $SCAF_SEED or 0")
    synth.add_argument("--out", required=True, help="Output trace file")
    synth.set_defaults(func=cmd_synth)

    align = commands.add_parser("align", help="DTW-realign a trace set")
    align.add_argument("--in", dest="input", required=True, help="Input trace file")
    align.add_argument("--reference-index", type=int, default=0, help="Row used as reference. Defaults to 0")
    align.add_argument("--resample", type=int, help="Resample aligned rows to this length")
    align.add_argument("--band", type=int, help="Sakoe-Chiba band width (off by default)")
    align.add_argument(
        "--sample-rows",
        type=int,
        help="Stretch the reference with this many evenly spaced rows and warp the rest onto it. Defaults to every row",
    )
    align.add_argument("--out", required=True, help="Output trace file")
    align.set_defaults(func=cmd_align)

    pca = commands.add_parser("pca", help="Fit or apply a PCA model")
    pca_commands = pca.add_subparsers(dest="pca_command", required=True)
    pca_fit = pca_commands.add_parser("fit", help="Fit PCA on a trace set")
    pca_fit.add_argument("--in", dest="input", required=True)
    pca_fit.add_argument("--components", type=int, help="Components to keep. Defaults to all")
    pca_fit.add_argument("--out", required=True, help="Output model file")
    pca_fit.add_argument("--plot", help="Write an explained-variance plot to this file")
    pca_fit.set_defaults(func=cmd_pca_fit)
    pca_project = pca_commands.add_parser("project", help="Project a trace set")
    pca_project.add_argument("--model", required=True)
    pca_project.add_argument("--in", dest="input", required=True)
    pca_project.add_argument("--out", required=True)
    pca_project.set_defaults(func=cmd_pca_project)

    train_cmd = commands.add_parser("train", help="Train an MLP or CNN key-byte classifier")
    train_cmd.add_argument("--arch", type=Architecture, choices=list(Architecture), default=Architecture.MLP)
    train_cmd.add_argument("--in", dest="input", required=True, help="Training trace file")
    train_cmd.add_argument("--val", help="Validation trace file")
    train_cmd.add_argument("--pca", help="PCA model applied before training and stored with the classifier")
    train_cmd.add_argument("--epochs", type=int, help="Epochs. Defaults to 100 (mlp) or 20 (cnn)")
    train_cmd.add_argument("--batch", type=int, default=256, help="Mini-batch size. Defaults to 256")
    train_cmd.add_argument("--l2", type=float, default=1e-4, help="L2 regularisation. Defaults to 1e-4")
    train_cmd.add_argument("--augment", type=int, default=0, help="Noisy copies per trace. Defaults to 0")
    train_cmd.add_argument("--augment-sigma", type=float, default=0.0, help="Augmentation noise sigma")
    train_cmd.add_argument("--seed", type=int, help="Random seed. Defaults to $SCAF_SEED or 0")
    train_cmd.add_argument("--out", required=True, help="Output model file")
    train_cmd.set_defaults(func=cmd_train)

    attack = commands.add_parser("attack", help="Run an attack")
    attack_commands = attack.add_subparsers(dest="attack_command", required=True)
    attack_cpa = attack_commands.add_parser("cpa", help="Correlation power analysis")
    attack_cpa.add_argument("--in", dest="input", required=True)
    attack_cpa.add_argument("--plaintext", type=int, help="Fixed plaintext byte (default: per-trace labels)")
    attack_cpa.add_argument("--top", type=int, default=10, help="Guesses to print. Defaults to 10")
    attack_cpa.add_argument("--csv", help="Write the full ranking to this CSV")
    attack_cpa.set_defaults(func=cmd_attack_cpa)
    attack_template = attack_commands.add_parser("template", help="Gaussian template attack on DOM POIs")
    attack_template.add_argument("--train", required=True)
    attack_template.add_argument("--test", required=True)
    attack_template.add_argument("--pois", type=int, default=2, help="Number of POIs. Defaults to 2")
    attack_template.add_argument("--csv", help="Write the confusion matrix to this CSV")
    attack_template.add_argument("--plot", help="Write a template ellipse plot to this file")
    attack_template.add_argument("--plot-classes", type=int, default=9, help="Classes in the ellipse plot")
    attack_template.set_defaults(func=cmd_attack_template)
    attack_model = attack_commands.add_parser("model", help="Attack with a saved classifier")
    attack_model.add_argument("--model", required=True)
    attack_model.add_argument("--in", dest="input", required=True)
    attack_model.set_defaults(func=cmd_attack_model)

    diag = commands.add_parser("diag", help="Device diagnostics")
    diag_commands = diag.add_subparsers(dest="diag_command", required=True)
    diag_outliers = diag_commands.add_parser("outliers", help="3-sigma outlier counts per device")
    diag_outliers.add_argument("--in", dest="input", required=True)
    diag_outliers.add_argument("--exclude-self", action="store_true", help="Leave each device out of its own mu/sigma")
    diag_outliers.add_argument("--plot", help="Write a per-device boxplot to this file")
    diag_outliers.set_defaults(func=cmd_diag_outliers)

    pipeline = commands.add_parser("pipeline", help="End-to-end experiments")
    pipeline_commands = pipeline.add_subparsers(dest="pipeline_command", required=True)
    pipeline_run = pipeline_commands.add_parser("run", help="Train one group, test on every device")
    pipeline_run.add_argument("--config", required=True, help="key=value pipeline config file")
    pipeline_run.add_argument("--method", choices=[value for _, value in METHOD_ORDER], help="Override the method")
    pipeline_run.add_argument("--out", help="Report directory. Defaults to $SCAF_OUTPUT_DIR or output_dir")
    pipeline_run.add_argument("--save-model", help="Write the trained classifier to this file")
    pipeline_run.add_argument("--plot", action="store_true", help="Also write an accuracy heatmap")
    pipeline_run.set_defaults(func=cmd_pipeline_run)
    pipeline_matrix = pipeline_commands.add_parser("matrix", help="Every training group x every device")
    pipeline_matrix.add_argument("--config", required=True, help="key=value pipeline config file")
    pipeline_matrix.add_argument("--groups", type=int, required=True, help="Devices per training group (j)")
    pipeline_matrix.add_argument("--leave-one-out", action="store_true", help="Train on all devices but one")
    pipeline_matrix.add_argument("--methods", help="Comma-separated methods (interactive selection if omitted)")
    pipeline_matrix.add_argument("--out", help="Report directory. Defaults to $SCAF_OUTPUT_DIR or output_dir")
    pipeline_matrix.add_argument("--plot", action="store_true", help="Also write accuracy heatmaps")
    pipeline_matrix.set_defaults(func=cmd_pipeline_matrix)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the scaf CLI application.

    Returns:
        int: Exit code (0 for success, non-zero for errors)
    """
    args = build_parser().parse_args(argv)
    load_environment_variables(args.env_file)
    try:
        return args.func(args)
    except (ScafError, ValidationError, OSError) as e:
        print(f"{Fore.RED}Error running scaf {args.command}: {e}{Style.RESET_ALL}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
