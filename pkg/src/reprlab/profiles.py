"""Network architectures and hyperparameter presets.

``desk`` is the scaled-down profile every test and experiment here runs.
``atari`` records the full-scale architectures and published settings of
the original study; it is shipped for documentation and is never trained by
the test suite.
"""

from __future__ import annotations

from reprlab.tensor.nn import NetworkSpec


def dqn_spec(profile: str, obs_shape, n_actions: int) -> NetworkSpec:
    if profile == "desk":
        layers = [
            {"kind": "conv2d", "filters": 16, "kernel": 3, "stride": 1, "padding": 1},
            {"kind": "relu"},
            {"kind": "conv2d", "filters": 32, "kernel": 3, "stride": 2, "padding": 1},
            {"kind": "relu"},
            {"kind": "dense", "units": 128},
            {"kind": "relu"},
            {"kind": "dense", "units": n_actions},
        ]
    elif profile == "atari":
        layers = [
            {"kind": "conv2d", "filters": 32, "kernel": 8, "stride": 4},
            {"kind": "relu"},
            {"kind": "conv2d", "filters": 64, "kernel": 4, "stride": 2},
            {"kind": "relu"},
            {"kind": "conv2d", "filters": 64, "kernel": 3, "stride": 1},
            {"kind": "relu"},
            {"kind": "dense", "units": 512},
            {"kind": "relu"},
            {"kind": "dense", "units": n_actions},
        ]
    else:
        raise ValueError(f"unknown profile {profile!r}")
    init = "fan-in" if profile == "desk" else "normal"
    return NetworkSpec.from_dict({"input_shape": list(obs_shape), "layers": layers, "init": init})


def generator_spec(profile: str, obs_shape, latent_dim: int = 100) -> NetworkSpec:
    c, h, w = obs_shape
    bn = {"kind": "batch-norm", "momentum": 0.9, "eps": 1e-5}
    if profile == "desk":
        if h % 4 or w % 4 or h != w:
            raise ValueError("desk generator expects square frames with side divisible by 4")
        s = h // 4
        layers = [
            {"kind": "dense", "units": 64 * s * s},
            {"kind": "reshape", "shape": [64, s, s]}, bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": 32, "kernel": 4, "stride": 2, "padding": 1},
            bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": 16, "kernel": 4, "stride": 2, "padding": 1},
            bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": c, "kernel": 3, "stride": 1, "padding": 1},
            {"kind": "tanh"},
        ]
    elif profile == "atari":
        layers = [
            {"kind": "dense", "units": 256 * 7 * 7},
            {"kind": "reshape", "shape": [256, 7, 7]}, bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": 256, "kernel": 5, "stride": 3, "padding": 1},
            bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": 128, "kernel": 5, "stride": 2, "padding": 2,
             "output_padding": 1},
            bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": 64, "kernel": 5, "stride": 2, "padding": 2,
             "output_padding": 1},
            bn, {"kind": "relu"},
            {"kind": "deconv2d", "filters": c, "kernel": 5, "stride": 1, "padding": 2},
            {"kind": "tanh"},
        ]
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return NetworkSpec.from_dict({"input_shape": [latent_dim], "layers": layers, "init": "fan-in"})


def discriminator_spec(profile: str, obs_shape) -> NetworkSpec:
    lrelu = {"kind": "leaky-relu", "slope": 0.2}
    if profile == "desk":
        layers = [
            {"kind": "conv2d", "filters": 32, "kernel": 3, "stride": 2, "padding": 1}, lrelu,
            {"kind": "conv2d", "filters": 64, "kernel": 3, "stride": 2, "padding": 1}, lrelu,
            {"kind": "dense", "units": 1},
        ]
    elif profile == "atari":
        layers = [
            {"kind": "conv2d", "filters": 64, "kernel": 5, "stride": 3, "padding": 1}, lrelu,
            {"kind": "conv2d", "filters": 128, "kernel": 5, "stride": 2, "padding": 2}, lrelu,
            {"kind": "conv2d", "filters": 256, "kernel": 5, "stride": 2, "padding": 2}, lrelu,
            {"kind": "dense", "units": 1},
        ]
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return NetworkSpec.from_dict({"input_shape": list(obs_shape), "layers": layers, "init": "fan-in"})


# Published DQN settings of the original study, verbatim ("frames" are environment frames).
ATARI_DQN = {
    "batch_size": 32,
    "replay_capacity": 200_000,
    "history": 4,
    "target_update_frames": 5_000,
    "gamma": 0.99,
    "action_repeat": 4,
    "update_frequency": 4,
    "lr": 0.00025,
    "momentum": 0.0,
    "decay": 0.99,
    "rms_eps": 1e-6,
    "eps_initial": 1.0,
    "eps_final": 0.1,
    "eps_final_frame": 1_000_000,
    "replay_start_frames": 50_000,
    "noop_max": 30,
    "stm_frames": 20_000_000,
    "ltm_frames": 20_000_000,
    "select_window_frames": 250_000,
    "gan_steps": 200_000,
    "pseudo_buffer": 250_000,
}

DESK_DQN = {
    "batch_size": 32,
    "replay_capacity": 50_000,
    "history": 4,
    "target_update_frames": 1_000,
    "gamma": 0.9,
    "action_repeat": 4,
    "update_frequency": 4,
    "lr": 0.00025,
    "momentum": 0.0,
    "decay": 0.99,
    "rms_eps": 1e-6,
    "eps_initial": 1.0,
    "eps_final": 0.1,
    "eps_final_frame": 50_000,
    "replay_start_frames": 5_000,
    "noop_max": 30,
    "stm_frames": 400_000,
    "ltm_frames": 400_000,
    "select_window_frames": 20_000,
    "gan_steps": 5_000,
    "pseudo_buffer": 20_000,
}
