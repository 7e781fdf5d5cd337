"""Check the hand-written backward passes against finite differences.

A tiny version of the classifier (32 bands, 5 classes) is small enough that
every parameter can be perturbed one at a time.  The harness disables dropout,
keeps batch normalization in train mode and reports the worst relative error
between the analytic gradient and a central difference.
"""
import numpy as np

from hydemic import nn


def tiny_classifier(rng, n_bands=32, n_classes=5, kernel=5, pool=2):
    width = ((n_bands - kernel + 1) // pool - kernel + 1) // pool
    layers = [
        nn.Conv1D(1, 4, kernel), nn.BatchNorm1D(4), nn.LeakyReLU(0.01), nn.MaxPool1D(pool), nn.Dropout(0.3),
        nn.Conv1D(4, 6, kernel), nn.BatchNorm1D(6), nn.LeakyReLU(0.01), nn.MaxPool1D(pool), nn.Dropout(0.3),
        nn.Flatten(),
        nn.Dense(width * 6, 8), nn.LeakyReLU(0.01), nn.Dropout(0.4),
        nn.Dense(8, 6), nn.LeakyReLU(0.01), nn.Dropout(0.4),
        nn.Dense(6, n_classes),
    ]
    for layer in layers:
        if hasattr(layer, "init"):
            layer.init(rng)
    return nn.Sequential(layers)


def main():
    rng = np.random.default_rng(0)
    for trial in range(5):
        net = tiny_classifier(rng)
        # stay away from LeakyReLU kinks and max-pool ties, where the
        # derivative is not defined and finite differences straddle it
        while True:
            x = rng.standard_normal((4, 1, 32))
            if not nn.near_nondifferentiable(net, x):
                break
        err = nn.gradient_check(net, x, rng.integers(0, 5, 4))
        print(f"trial {trial}: max relative error {err:.2e}")

    # a deliberately broken gradient must be caught
    net = tiny_classifier(rng)
    x = rng.standard_normal((4, 1, 32))

    def break_first_dense(grads):
        i = next(i for i, layer in enumerate(net.layers) if isinstance(layer, nn.Dense))
        grads[i]["weight"] *= 1.5

    err = nn.gradient_check(net, x, rng.integers(0, 5, 4), grad_hook=break_first_dense)
    print(f"scaled dense gradient: max relative error {err:.2e} (should be large)")


if __name__ == "__main__":
    main()
