fn main() {
    if let Err(e) = combo_ewoc_cli::run(std::env::args_os()) {
        if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
            clap_err.exit();
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
