use std::time::Duration;

use hypcbm_service::{AppState, Bundle};

use super::{bank, child_rule, head, images};
use crate::args::Serve;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::RunContext;

pub fn serve(args: &Serve, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out.clone().unwrap_or_else(|| std::env::temp_dir().join("hypcbm-serve"));
    let mut ctx = RunContext::new(&out)?;
    let bank = bank(cfg, &mut ctx)?;
    let images = images(cfg.images()?, &bank, &mut ctx)?;
    let head = head(cfg, &bank, &mut ctx)?;
    let rule = child_rule(&args.propagation, &mut ctx)?;
    let state = AppState::new(
        Bundle {
            bank,
            head,
            images,
            eta_img: cfg.eta_img(),
            rule,
        },
        Duration::from_secs(args.ttl_minutes * 60),
    )?;
    ctx.finish("serve", cfg, args)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
    eprintln!("serving on http://{}", args.addr);
    runtime.block_on(hypcbm_service::serve(state, args.addr, args.ui_dir.clone()))?;
    Ok(())
}
