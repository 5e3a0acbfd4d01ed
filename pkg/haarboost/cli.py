"""
This module provides the ``haarboost`` command line interface.

Subcommands:

* ``train`` trains a model sequentially, on several threads or on a
  cluster.
* ``role`` runs one cluster role (master, submaster or worker).
* ``classify`` classifies a PGM window with a model file.
* ``features`` prints the feature census of a window.
* ``bench`` predicts, fits and measures round times.

Progress is logged to standard error; models, counts and reports go to
standard output or files. The exit code is 0 on success, 1 on runtime
errors and 2 on usage errors.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from . import boosting
from . import cluster
from . import config
from . import dataset
from . import engine
from . import error
from . import features
from . import imaging
from . import perfmodel

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

MODES = ("seq", "par", "cluster")
SWEEP_MODES = ("seq", "par", "one", "two")


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("{!r} is not an integer"
                                         .format(text))
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1, got {}"
                                         .format(value))
    return value


def synth_spec(text):
    """Parse ``SEED,L,M``."""
    try:
        seed, l, m = (int(part) for part in text.split(","))  # noqa: E741
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected SEED,L,M (three integers), got {!r}".format(text)
        )
    if l < 1 or m < 1:
        raise argparse.ArgumentTypeError("L and M must be at least 1")
    return seed, l, m


def int_list(text):
    try:
        return [positive_int(part) for part in text.split(",")]
    except argparse.ArgumentTypeError as e:
        raise argparse.ArgumentTypeError("{!r}: {}".format(text, e))


def mode_list(text):
    modes = text.split(",")
    unknown = [m for m in modes if m not in SWEEP_MODES]
    if unknown:
        raise argparse.ArgumentTypeError(
            "unknown modes {}; choose from {}".format(
                ",".join(unknown), ",".join(SWEEP_MODES)
            )
        )
    return modes


def _add_data_arguments(parser, required=True):
    group = parser.add_argument_group(
        "dataset", "a PGM corpus (--pos and --neg) or synthetic data "
                   "(--synth)" + ("" if required else "; optional, "
                                  "overrides the master's reference")
    )
    group.add_argument("--pos", metavar="DIR",
                       help="directory of positive 24x24 PGM windows")
    group.add_argument("--neg", metavar="DIR",
                       help="directory of negative 24x24 PGM windows")
    group.add_argument("--synth", metavar="SEED,L,M", type=synth_spec,
                       help="generate L positives and M negatives")


def _add_timeout_argument(parser):
    parser.add_argument("--timeout", type=float, default=None,
                        metavar="SECONDS",
                        help="handshake timeout (default {})"
                             .format(config.TIMEOUT))


def get_parser():
    parser = argparse.ArgumentParser(
        prog="haarboost",
        description="Parallel and distributed AdaBoost training of Haar "
                    "feature stumps.",
    )
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + __version__)
    parser.add_argument("--debug", action="store_true",
                        help="log debug messages")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    train = commands.add_parser("train", help="train a model")
    _add_data_arguments(train)
    train.add_argument("--rounds", type=positive_int, required=True,
                       metavar="T", help="number of boosting rounds")
    train.add_argument("--mode", choices=MODES, default="seq",
                       help="sequential, multi-threaded or cluster "
                            "training (default seq)")
    train.add_argument("--workers", type=positive_int, default=None,
                       metavar="K",
                       help="threads per process (default: physical cores "
                            "for par, 1 for --local)")
    train.add_argument("--topology", choices=("one", "two"), default="one",
                       help="cluster levels (default one)")
    train.add_argument("--children", type=positive_int, default=5,
                       metavar="S",
                       help="children of the master (default 5)")
    train.add_argument("--fanout", type=positive_int, default=1,
                       metavar="N",
                       help="workers per sub-master (default 1)")
    train.add_argument("--features", type=positive_int, default=None,
                       metavar="N",
                       help="train on the first N features only")
    endpoint = train.add_mutually_exclusive_group()
    endpoint.add_argument("--listen", metavar="HOST:PORT",
                          help="run the master and wait for external roles")
    endpoint.add_argument("--local", action="store_true",
                          help="run all roles as local processes")
    _add_timeout_argument(train)
    train.add_argument("--out", metavar="MODEL",
                       help="model file (default: standard output)")
    train.set_defaults(func=cmd_train)

    role = commands.add_parser("role", help="run one cluster role")
    role.add_argument("kind", choices=cluster.ROLES)
    role.add_argument("--listen", metavar="HOST:PORT",
                      help="endpoint children connect to")
    role.add_argument("--parent", metavar="HOST:PORT",
                      help="endpoint of the parent role")
    role.add_argument("--expect", type=positive_int, metavar="N",
                      help="number of children to wait for")
    role.add_argument("--topology", choices=("one", "two"), default="one",
                      help="master only: whether children are workers "
                           "(one) or sub-masters (two)")
    role.add_argument("--rounds", type=positive_int, metavar="T",
                      help="master only: number of boosting rounds")
    role.add_argument("--features", type=positive_int, default=None,
                      metavar="N", help="master only: feature prefix")
    role.add_argument("--workers", type=positive_int, default=None,
                      metavar="K", help="worker only: threads")
    role.add_argument("--node-id", metavar="NAME",
                      help="node name used in messages and errors")
    role.add_argument("--out", metavar="MODEL",
                      help="master only: model file")
    _add_data_arguments(role, required=False)
    _add_timeout_argument(role)
    role.set_defaults(func=cmd_role)

    classify = commands.add_parser("classify", help="classify a window")
    classify.add_argument("--model", required=True, metavar="MODEL")
    classify.add_argument("--image", required=True, metavar="FILE.pgm")
    classify.set_defaults(func=cmd_classify)

    census = commands.add_parser("features", help="print feature counts")
    census.add_argument("--window", type=int, default=config.WINDOW)
    census.add_argument("--counts", action="store_true",
                        help="print per-type and total counts (default)")
    census.add_argument("--list", type=positive_int, default=None,
                        metavar="N",
                        help="print the descriptors of the first N features")
    census.set_defaults(func=cmd_features)

    bench = commands.add_parser("bench", help="performance model and "
                                              "measurements")
    actions = bench.add_subparsers(dest="action", metavar="ACTION")
    actions.required = True

    predict = actions.add_parser("predict", help="predict round times")
    predict.add_argument("--n", type=positive_int, default=None,
                         help="workers per sub-master (default: a table "
                              "of 1..10)")
    predict.add_argument("--m", type=positive_int,
                         default=perfmodel.SUBMASTER_FEATURES,
                         help="features per sub-master (default {})"
                              .format(perfmodel.SUBMASTER_FEATURES))
    predict.add_argument("--comm", type=float, default=config.COEFF_COMM,
                         help="seconds per worker")
    predict.add_argument("--compute", type=float,
                         default=config.COEFF_COMPUTE,
                         help="seconds per feature")
    predict.set_defaults(func=cmd_predict)

    fit = actions.add_parser("fit", help="fit the model coefficients")
    fit.add_argument("--csv", required=True, metavar="FILE",
                     help="measurements with the columns n, m, seconds")
    fit.set_defaults(func=cmd_fit)

    sweep = actions.add_parser("sweep", help="measure training strategies")
    _add_data_arguments(sweep)
    sweep.add_argument("--modes", type=mode_list, default=["seq", "par"],
                       help="comma-separated subset of {} (default seq,par)"
                            .format(",".join(SWEEP_MODES)))
    sweep.add_argument("--rounds", type=positive_int, default=3,
                       metavar="T")
    sweep.add_argument("--workers", type=positive_int, default=None,
                       metavar="K", help="threads for par")
    sweep.add_argument("--children", type=positive_int, default=5,
                       metavar="S")
    sweep.add_argument("--fanouts", type=int_list, default=[1],
                       metavar="N,...",
                       help="fan-outs measured for two (default 1)")
    sweep.add_argument("--features", type=positive_int, default=None,
                       metavar="N")
    _add_timeout_argument(sweep)
    sweep.add_argument("--out", metavar="REPORT",
                       help="text report; a CSV is written next to it")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def _dataset_ref(parser, args, required=True):
    if args.synth is not None:
        if args.pos or args.neg:
            parser.error("--synth can't be combined with --pos/--neg")
        return dataset.DatasetRef.synthetic(*args.synth)
    if args.pos and args.neg:
        return dataset.DatasetRef.dirs(args.pos, args.neg)
    if args.pos or args.neg or required:
        parser.error("the dataset requires both --pos DIR and --neg DIR, "
                     "or --synth SEED,L,M")
    return None


def _topology(kind, children, fanout):
    if kind == "one":
        return cluster.Topology.one_level(children)
    return cluster.Topology.two_level(children, fanout)


def write_model(sc, filepath=None):
    """Write a model file, or print it if `filepath` is None."""
    text = json.dumps(sc.to_dict(), indent=2) + "\n"
    if filepath is None:
        sys.stdout.write(text)
        return
    with open(filepath, "w") as f:
        f.write(text)
    log.info("Wrote model to {}".format(filepath))


def read_model(filepath):
    """
    Read a model file.

    Raises:
        ModelFormatError: If the file is not a valid model document.
    """
    try:
        with open(filepath) as f:
            document = json.load(f)
    except (OSError, ValueError) as e:
        raise error.ModelFormatError("Couldn't read model {!r}: {}"
                                     .format(filepath, e))
    return boosting.StrongClassifier.from_dict(document)


def _log_round(number, record, seconds):
    log.info("round {}: feature {}, error {:.6g}, alpha {:.6g}, {:.3f} s"
             .format(number, record.weak.feature_index, record.weak.error,
                     record.alpha, seconds))


def _progress(record, timing):
    _log_round(timing.round, record, timing.total)


def _feature_set(window, count):
    fset = features.enumerate_features(window)
    if count is None:
        return fset
    if count > len(fset):
        raise error.PartitionError(
            "A {0}x{0} window has only {1} features, got --features {2}"
            .format(window, len(fset), count)
        )
    return fset.prefix(count)


def _local_executor(mode, data, workers, feature_count):
    fset = _feature_set(data.window, feature_count)
    if mode == "seq":
        return boosting.SequentialExecutor(data, fset)
    return engine.ParallelExecutor(data, worker_budget=workers,
                                   feature_set=fset)


def cmd_train(parser, args):
    if args.mode == "cluster" and not (args.listen or args.local):
        parser.error("--mode cluster requires --listen HOST:PORT (wait for "
                     "external roles) or --local (simulate all roles)")
    if args.mode != "cluster" and (args.listen or args.local):
        parser.error("--listen and --local require --mode cluster")
    ref = _dataset_ref(parser, args)
    topology = _topology(args.topology, args.children, args.fanout)

    if args.mode == "cluster" and args.local:
        log.info("Simulating {} on local processes".format(topology.label()))
        sc, reports = cluster.simulate_local(
            topology, ref, args.rounds, args.features,
            worker_budget=args.workers or 1, timeout=args.timeout,
        )
        for record, stat in zip(sc.rounds, reports[0].rounds):
            _log_round(stat.round, record, stat.seconds)
        log.debug("Network overhead:\n{}"
                  .format(cluster.overhead_report(reports)))
    elif args.mode == "cluster":
        sc = cluster.run_master(
            topology, ref, args.rounds, args.listen,
            feature_count=args.features, timeout=args.timeout,
            callback=_progress,
        )
    else:
        data = ref.resolve()
        log.info("Loaded {} positives and {} negatives"
                 .format(data.stats.l, data.stats.m))
        executor = _local_executor(args.mode, data, args.workers,
                                   args.features)
        try:
            sc = boosting.train(data, args.rounds, executor,
                                callback=_progress)
        finally:
            executor.close()
    write_model(sc, args.out)
    return 0


def cmd_role(parser, args):
    kwargs = {"timeout": args.timeout}
    if args.node_id:
        kwargs["node_id"] = args.node_id
    if args.kind == "master":
        if not (args.listen and args.expect and args.rounds):
            parser.error("role master requires --listen HOST:PORT, "
                         "--expect N, --rounds T and a dataset")
        ref = _dataset_ref(parser, args)
        sc = cluster.run_master(
            _topology(args.topology, args.expect, 1), ref, args.rounds,
            args.listen, feature_count=args.features, callback=_progress,
            **kwargs
        )
        write_model(sc, args.out)
    elif args.kind == "submaster":
        if not (args.parent and args.listen and args.expect):
            parser.error("role submaster requires --parent HOST:PORT, "
                         "--listen HOST:PORT and --expect N")
        report = cluster.run_submaster(args.parent, args.listen,
                                       args.expect, **kwargs)
        log.info("{} relayed {} rounds".format(report.node_id,
                                               len(report.rounds)))
    else:
        if not args.parent:
            parser.error("role worker requires --parent HOST:PORT")
        report = cluster.run_worker(
            args.parent, _dataset_ref(parser, args, required=False),
            worker_budget=args.workers, **kwargs
        )
        log.info("{} served {} rounds".format(report.node_id,
                                              len(report.rounds)))
    return 0


def cmd_classify(parser, args):
    sc = read_model(args.model)
    image = dataset.read_pgm(args.image, window=None)
    print(boosting.classify(sc, imaging.integral_of(image)))
    return 0


def cmd_features(parser, args):
    if args.window < 3:
        parser.error("--window must be at least 3")
    fset = features.enumerate_features(args.window)
    if args.list is not None:
        for feature in fset.prefix(min(args.list, len(fset))):
            print(json.dumps(feature.to_dict()))
        if not args.counts:
            return 0
    rows = [(ftype.label, str(len(span)))
            for ftype, span in fset.type_ranges().items()]
    rows.append(("total", str(len(fset))))
    print(perfmodel.format_rows(("type", "count"), rows))
    return 0


def cmd_predict(parser, args):
    if args.comm <= 0 or args.compute <= 0:
        parser.error("--comm and --compute must be positive")
    if args.n is not None:
        model = perfmodel.PredictiveModelInput(args.n, args.m, args.comm,
                                               args.compute)
        print("{:.1f}".format(perfmodel.predict_round_time(model)))
        return 0
    base = perfmodel.PredictiveModelInput(1, args.m, args.comm, args.compute)
    rows = [
        (str(n), "{:.1f}".format(perfmodel.predict_round_time(
            perfmodel.PredictiveModelInput(n, args.m, args.comm,
                                           args.compute))))
        for n in perfmodel.FANOUTS
    ]
    print(perfmodel.format_rows(("nodes", "round (s)"), rows))
    n_star, n_int = perfmodel.optimal_fanout(args.m, base.coeff_comm,
                                             base.coeff_compute)
    print("optimal fan-out: {:.3f} (best integer {})".format(n_star, n_int))
    return 0


def cmd_fit(parser, args):
    fitted = perfmodel.fit_coefficients(
        perfmodel.read_measurements(args.csv)
    )
    print("coeff_comm {!r}".format(fitted.coeff_comm))
    print("coeff_compute {!r}".format(fitted.coeff_compute))
    return 0


def _measure_local(mode, ref, args):
    data = ref.resolve()
    executor = _local_executor(mode, data, args.workers, args.features)
    rounds = []
    try:
        boosting.train(data, args.rounds, executor,
                       callback=lambda record, timing:
                       rounds.append(timing.total))
    finally:
        executor.close()
    return data.upload_seconds + executor.upload_seconds, rounds


def _measure_cluster(topology, ref, args):
    _, reports = cluster.simulate_local(
        topology, ref, args.rounds, args.features, timeout=args.timeout,
    )
    upload = reports[0].upload_seconds + max(
        r.upload_seconds for r in reports if r.kind == "worker"
    )
    return upload, [stat.seconds for stat in reports[0].rounds], reports


def cmd_sweep(parser, args):
    ref = _dataset_ref(parser, args)
    timings, overheads = {}, []
    for mode in args.modes:
        if mode == "seq":
            timings["sequential"] = _measure_local(mode, ref, args)
        elif mode == "par":
            label = "parallel({})".format(args.workers or config.WORKERS)
            timings[label] = _measure_local(mode, ref, args)
        else:
            fanouts = [1] if mode == "one" else args.fanouts
            for fanout in fanouts:
                topology = _topology(mode, args.children, fanout)
                upload, rounds, reports = _measure_cluster(topology, ref,
                                                           args)
                timings[topology.label()] = (upload, rounds)
                overheads.append("{}\n{}".format(
                    topology.label(), cluster.overhead_report(reports)
                ))
        log.info("Measured {}".format(list(timings)[-1]))
    baseline = next(iter(timings))
    records = perfmodel.speedup_report(timings, baseline)
    report = perfmodel.render_table(records, baseline)
    if overheads:
        report += "\n\nnetwork overhead per round\n\n" + "\n\n".join(
            overheads
        )
    print(report)
    if args.out:
        with open(args.out, "w") as f:
            f.write(report + "\n")
        perfmodel.write_csv(records, os.path.splitext(args.out)[0] + ".csv")
    return 0


def main(argv=None):
    """
    Run the command line interface.

    Args:
        argv (list, optional): Arguments without the program name;
            ``sys.argv[1:]`` by default.

    Returns:
        int: The exit code.
    """
    parser = get_parser()
    args = parser.parse_args(argv)
    config.DEBUG = args.debug
    config.configure_logging()
    try:
        return args.func(parser, args)
    except (error.HaarBoostError, OSError, ValueError) as e:
        log.error("error: {}".format(e))
        return 1
