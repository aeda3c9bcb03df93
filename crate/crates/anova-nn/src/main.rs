use std::process::ExitCode;

fn main() -> ExitCode {
    anova_nn::cli::main()
}
