"""Scratch: alpha=0 margin-pressure variants (not shipped)."""
from exp_gap2 import run, bit_divergence


def variant(tau, wg, alpha, lr=0.05):
    def mut(d):
        d["model"]["group_factor"] = 32
        d["model"]["sizes_m"] = [512, 1600]
        d["model"]["groupsum_tau"] = tau
        d["loss"]["label_smoothing"] = alpha
        if wg:
            d["loss"]["aux"].append(
                {"loss_id": "gate_entropy", "ramp_start_step": 500,
                 "ramp_end_step": 4000, "w_max": wg}
            )
        d["optimizer"]["lr"] = lr
    return mut


if __name__ == "__main__":
    for tag, mut in [
        ("F_a0_tau1_wg1", variant(1.0, 1.0, 0.0)),
        ("G_a0_tau2_wg1", variant(2.0, 1.0, 0.0)),
        ("H_a0_tau1_wg0", variant(1.0, 0.0, 0.0)),
    ]:
        model, ds, runc = run(tag, 20.0, 0.0, steps=6000, mutate=mut, eval_every=2000)
        div = bit_divergence(model, ds)
        keep = ("n", "l", "k_t7", "p_t7", "m_t7")
        print(tag, {k: round(v, 4) for k, v in div.items() if k in keep}, flush=True)
