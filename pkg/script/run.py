from driftguard.harness import default_adaptation_config, run_mfisher
from driftguard.utility import setup_logging


def main():
    """Run the desk-scale adaptation suite and print both reports"""
    setup_logging()

    cfg = default_adaptation_config(seed=7, n_runs=50)
    detection, adaptation = run_mfisher(cfg, disable_tqdm=False)

    print(f"empirical FAR\t{detection.empirical_far:.4f}")
    print(f"mean delay\t{detection.mean_delay}")
    print(f"predicted delay\t{detection.predicted_delay}")

    for key, value in adaptation.to_dict().items():
        print(f"{key}\t{value}")


if __name__ == "__main__":
    main()
