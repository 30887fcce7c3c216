use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use locklab::attacker::forge_dfu;
use locklab::firmware::{Behavior, FirmwarePackage, Manifest};
use locklab::harness::scenario::RunConfig;
use locklab::harness::{
    ablation_matrix, full_report, impostor_encounter, run_scenario, ScenarioLibrary,
    VictimBehavior, World,
};
use locklab::manufacturer::firmware_signer_for_seed;
use locklab::profile::{AblationTarget, DfuIntegrity, Preset, SecurityProfile};
use locklab::transport::TransportKind;

#[derive(Parser)]
#[command(name = "locklab", version, about = "Smart padlock security testbed")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Machine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Integrity {
    Crc16,
    Signature,
}

impl From<Integrity> for DfuIntegrity {
    fn from(i: Integrity) -> Self {
        match i {
            Integrity::Crc16 => DfuIntegrity::Crc16,
            Integrity::Signature => DfuIntegrity::Signature,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanTarget {
    /// The manufacturer's lock as shipped.
    Genuine,
    /// An attacker-built look-alike without attestation.
    Impostor,
    /// The genuine lock running a signed image that is not in the catalog.
    Tampered,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "inproc")]
    transport: TransportKind,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and check it against its declared expectation.
    Scenario {
        name: String,
        #[arg(long)]
        profile: Preset,
        /// Control row (A, B, F, G, H, C01..C06), profile field group, or wake_mode.
        #[arg(long)]
        ablate: Vec<AblationTarget>,
        /// Extra directory of scenario TOML files.
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// List available scenarios.
    List {
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
    },
    /// Exploit-versus-control ablation matrix.
    Matrix {
        #[command(flatten)]
        common: Common,
    },
    /// Build or check firmware update packages.
    Dfu {
        #[command(subcommand)]
        action: DfuCmd,
    },
    /// Attestation scan of a device.
    Scan {
        #[arg(long, value_enum, default_value_t = ScanTarget::Genuine)]
        target: ScanTarget,
        #[arg(long, default_value = "hardened")]
        profile: Preset,
        #[command(flatten)]
        common: Common,
    },
    /// Matrix, threat model with per-control verdicts, end-to-end runs.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum DfuCmd {
    Pack {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "1.0.0")]
        version: String,
        #[arg(long, default_value = "legitimate")]
        behavior: Behavior,
        #[arg(long, value_enum)]
        integrity: Integrity,
        /// Seed of the manufacturer whose firmware key signs.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    Verify {
        #[arg(long)]
        package: PathBuf,
        #[arg(long, value_enum)]
        integrity: Integrity,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn library(dir: Option<PathBuf>) -> Result<ScenarioLibrary, String> {
    let mut lib = ScenarioLibrary::builtin();
    if let Some(d) = dir {
        lib.load_dir(&d).map_err(|e| e.to_string())?;
    }
    Ok(lib)
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Cmd::Scenario {
            name,
            profile,
            ablate,
            scenario_dir,
            common,
        } => {
            let lib = library(scenario_dir)?;
            let scenario = lib.get(&name).map_err(|e| e.to_string())?;
            let cfg = RunConfig {
                preset: profile,
                ablations: ablate,
                seed: common.seed,
                transport: common.transport,
            };
            let report = run_scenario(scenario, &cfg);
            match common.format {
                Format::Text => print!("{}", report.to_text()),
                Format::Machine => println!("{}", report.to_json()),
            }
            Ok(status(report.expectation_met))
        }
        Cmd::List { scenario_dir } => {
            for n in library(scenario_dir)?.names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Matrix { common } => {
            let m = ablation_matrix(&ScenarioLibrary::builtin(), common.seed, common.transport);
            let s = m.soundness();
            match common.format {
                Format::Text => {
                    print!("{}", m.to_text());
                    println!("{}", s.summary());
                }
                Format::Machine => println!("{}", m.to_json()),
            }
            Ok(status(s.sound))
        }
        Cmd::Report { common } => {
            let r = full_report(&ScenarioLibrary::builtin(), common.seed, common.transport)
                .map_err(|e| e.to_string())?;
            match common.format {
                Format::Text => print!("{}", r.to_text()),
                Format::Machine => println!("{}", r.to_json()),
            }
            Ok(status(
                r.soundness.sound && r.scenarios.iter().all(|s| s.expectation_met),
            ))
        }
        Cmd::Scan {
            target,
            profile,
            common,
        } => {
            let verdict = match target {
                ScanTarget::Impostor => {
                    impostor_encounter(common.seed, VictimBehavior::ScanFirst, common.transport)
                        .outcome
                        .verdict
                        .expect("scan-first victims scan")
                }
                ScanTarget::Genuine | ScanTarget::Tampered => {
                    let w = World::new(
                        SecurityProfile::preset(profile),
                        common.seed,
                        common.transport,
                    );
                    if let ScanTarget::Tampered = target {
                        let pkg = forge_dfu(b"image outside the vendor catalog", "9.9.9")
                            .sign_with(w.manufacturer().firmware_signer());
                        w.lock().lock().expect("lock mutex").install_unchecked(pkg);
                    }
                    let mut radio = w.lock_client();
                    w.scanner().scan_device(&mut radio, &[0x5C; 16])
                }
            };
            match common.format {
                Format::Text => println!("{verdict}"),
                Format::Machine => println!("{}", serde_json::json!({ "verdict": verdict })),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Dfu { action } => dfu(action),
    }
}

fn dfu(action: DfuCmd) -> Result<ExitCode, String> {
    match action {
        DfuCmd::Pack {
            image,
            out,
            version,
            behavior,
            integrity,
            seed,
        } => {
            let bytes = std::fs::read(&image).map_err(|e| format!("{}: {e}", image.display()))?;
            let mut pkg = FirmwarePackage::with_crc(Manifest { version, behavior }, bytes);
            if let Integrity::Signature = integrity {
                pkg = pkg.sign_with(&firmware_signer_for_seed(seed));
            }
            std::fs::write(&out, pkg.to_bytes()).map_err(|e| format!("{}: {e}", out.display()))?;
            println!(
                "wrote {} ({} bytes, crc16 {:04x})",
                out.display(),
                pkg.to_bytes().len(),
                pkg.crc16
            );
            Ok(ExitCode::SUCCESS)
        }
        DfuCmd::Verify {
            package,
            integrity,
            seed,
        } => {
            let bytes =
                std::fs::read(&package).map_err(|e| format!("{}: {e}", package.display()))?;
            let trust = firmware_signer_for_seed(seed).verification_key();
            let ok = FirmwarePackage::from_bytes(&bytes)
                .ok()
                .is_some_and(|p| p.verify(integrity.into(), &trust).is_ok());
            println!("{}", if ok { "OK" } else { "INTEGRITY_FAILED" });
            Ok(status(ok))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("locklab: {e}");
            ExitCode::from(2)
        }
    }
}
