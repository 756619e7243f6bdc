use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use sdcn_core::storage;

#[derive(Args, Debug)]
pub struct DescribeArgs {
    /// Dataset (.sdcd), checkpoint or dictionary (.sdcn) file
    pub file: PathBuf,
}

pub fn run(args: &DescribeArgs) -> Result<()> {
    println!("{}", storage::describe(&args.file)?);
    Ok(())
}
