import os


def main():
    seeds = [42, 43, 44, 45, 46]
    for scenario in ['shield', 'shield_off', 'point_charge']:
        for seed in seeds:
            config = f'scenarios/{scenario}_{seed}.yaml'
            with open(f'scenarios/{scenario}.yaml', 'r') as f:
                text = f.read()
            with open(config, 'w') as f:
                f.write(text.replace('seed: 42', f'seed: {seed}'))
            os.system(f"python src/main.py run {config} --disable_progress")
            os.remove(config)

    os.system("python src/main.py pair scenarios/shield.yaml --cutoffs 3 4 5 --thermal_units --repeats 5")

    os.system("python src/main.py sweep scenarios/frontier.yaml --mu 1 --tau 4 5 5.5 6 7 --repeats 3")


if __name__ == '__main__':
    main()
