"""Scratch: activation-sampling variants (not shipped)."""
from exp_gap2 import run, bit_divergence


def variant(tau, alpha, wg=0.0, sampling=True, lr=0.05):
    def mut(d):
        d["model"]["group_factor"] = 32
        d["model"]["sizes_m"] = [512, 1600]
        d["model"]["groupsum_tau"] = tau
        d["model"]["activation_sampling"] = sampling
        d["loss"]["label_smoothing"] = alpha
        if wg:
            d["loss"]["aux"].append(
                {"loss_id": "gate_entropy", "ramp_start_step": 500,
                 "ramp_end_step": 4000, "w_max": wg}
            )
        d["optimizer"]["lr"] = lr
    return mut


if __name__ == "__main__":
    for tag, mut, steps in [
        ("Z1_sample_a0_tau1", variant(1.0, 0.0), 6000),
        ("Z2_sample_a0_tau1_wg0.5", variant(1.0, 0.0, wg=0.5), 6000),
    ]:
        model, ds, runc = run(tag, 20.0, 0.0, steps=steps, mutate=mut, eval_every=1000)
        div = bit_divergence(model, ds)
        keep = ("n", "l", "k_t7", "p_t7", "m_t7")
        print(tag, {k: round(v, 4) for k, v in div.items() if k in keep}, flush=True)
