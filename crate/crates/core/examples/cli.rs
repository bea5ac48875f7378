// The `lahst` command line driven in-process, with the exit codes it
// returns.

use lahst::cli::main_with_args;

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 3\n[synth]\npatients = 30\n[model]\ndim = 16\n[train]\nnmax = 8\npeak_lr = 1e-3\nmax_epochs = 2\npatience = 1\n",
    )?;
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let (config, data, out) = (config.to_str().unwrap(), data.to_str().unwrap(), out.to_str().unwrap());

    let steps: [&[&str]; 4] = [
        &["gen-data", "--config", config, "--out", data],
        &["train", "--config", config, "--data", data, "--out", out],
        &["eval", "--config", config, "--data", data, "--out", out, "--cutoffs", "48,full", "--ablate-context"],
        &["predict", "--out", out, "--data", data, "--cutoffs", "full", "--topk", "3", "--stays", &format!("{data}/test.jsonl")],
    ];
    for args in steps {
        let code = main_with_args(std::iter::once("lahst").chain(args.iter().copied()));
        println!("lahst {} -> exit {code}", args[0]);
        assert_eq!(code, 0);
    }

    let again = main_with_args(["lahst", "gen-data", "--config", config, "--out", data]);
    println!("gen-data over existing files -> exit {again}");
    assert_eq!(again, 2);
    let missing = main_with_args(["lahst", "eval", "--out", &format!("{out}/nowhere")]);
    println!("eval without a checkpoint -> exit {missing}");
    assert_eq!(missing, 4);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
