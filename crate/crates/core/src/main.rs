use clap::error::ErrorKind;
use clap::Parser;
use contact_gnn::cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            let report = serde_json::json!({
                "error": "usage",
                "message": e.to_string(),
            });
            eprintln!("{report}");
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        let report = serde_json::json!({
            "error": e.kind(),
            "message": e.to_string(),
        });
        eprintln!("{report}");
        std::process::exit(1);
    }
}
