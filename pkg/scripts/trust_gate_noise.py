#!/usr/bin/env python3
"""Trust-gate response to injected joint noise.

Trains a trust-gated tree model on clean synthetic data, then corrupts one
joint of every test sequence (random direction, ~0.3 m) and reports the
drop in trust-gate magnitude at the affected lattice steps plus the
accuracy under noise, with and without the trust gate.

Usage:
    python scripts/trust_gate_noise.py --joint 16 --magnitude 0.3
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from stlstm import cli, data, network, rng, skeleton, training  # noqa: E402


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--joint", type=int, default=16)
    ap.add_argument("--magnitude", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=100)
    return ap.parse_args()


def noisy_copy(seqs, joint, magnitude, seed):
    return [data.inject_noise(s, joint, magnitude, rng.stream(seed, "noise", k))
            for k, s in enumerate(seqs)]


def main():
    args = parse_args()
    spec = data.SyntheticSpec(joints=16, class_count=4, frames=40,
                              train_per_class=100, test_per_class=50,
                              noise_sigma=0.01, seed=100)
    dataset = data.generate_synthetic(spec)
    graph = skeleton.default_graph(16)
    order = skeleton.tree_traversal(graph).steps
    train_seqs = dataset.subset("train")
    test_seqs = dataset.subset("test")
    rc = cli.RunConfig(d=32, frames=20, class_count=4, epochs=args.epochs,
                       batch_size=10, learning_rate=5e-4, clip_gradients=True,
                       stop_train_accuracy=0.995)

    models = {}
    for trust in (True, False):
        mc = cli.variant_model_config("tree", trust, True, rc, dataset)
        tc = cli.train_config_from_run(rc)
        tc.seed = args.seed
        model, result = cli.fit_model(mc, train_seqs, test_seqs, graph, tc,
                                      rc.learning_rate, rc.momentum, rc.decay)
        models[trust] = (model, result["test_accuracy"])
        print(f"trust={trust}: clean test accuracy {result['test_accuracy']:.3f}")

    noisy = noisy_copy(test_seqs, args.joint, args.magnitude, args.seed)
    affected = [s for s, j in enumerate(order) if j == args.joint]

    trust_model, clean_acc = models[True]
    clean_norms, noisy_norms = [], []
    for seq_clean, seq_noisy in zip(test_seqs, noisy):
        frames = training.eval_frame_indices(seq_clean.frame_count,
                                             trust_model.config.frames)
        for seq, sink in ((seq_clean, clean_norms), (seq_noisy, noisy_norms)):
            prepared = network.stack_prepared(
                [network.prepare_sample(seq, order, frames, trust_model.config)])
            norms = cli.trust_gate_norms(trust_model, prepared)[0]
            sink.append(norms[affected].mean())
    clean_mean = float(np.mean(clean_norms))
    noisy_mean = float(np.mean(noisy_norms))
    print(f"trust-gate magnitude at joint {args.joint} steps: "
          f"clean {clean_mean:.4f} vs noisy {noisy_mean:.4f} "
          f"(difference {clean_mean - noisy_mean:+.4f})")

    for trust in (True, False):
        model, clean_acc = models[trust]
        acc, _, _ = training.evaluate(model, noisy, order)
        print(f"trust={trust}: noisy test accuracy {acc:.3f} "
              f"(drop {clean_acc - acc:+.3f})")


if __name__ == "__main__":
    main()
