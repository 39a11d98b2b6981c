fn main() {
    print!(
        "{}",
        grasp::pipeline::ExperimentConfig::smoke()
            .to_toml_string()
            .unwrap()
    );
}
