//! Purpose subsumption: the taxonomy is a forest plus alias edges, so one
//! declared purpose can satisfy several granted domains. This is what
//! keeps a medical-research grant alive when the owner retargets a policy
//! from medical to academic use.
//!
//! ```bash
//! cargo run -p distexchange --example purpose_taxonomy
//! ```

use distexchange::policy::{
    check_purpose, Decision, Obligation, Purpose, PurposeTaxonomy, UsagePolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let taxonomy = PurposeTaxonomy::default_market();
    println!("taxonomy nodes:");
    for node in taxonomy.nodes() {
        println!("  {node}");
    }

    let declared = Purpose::new("medical-research-university-hospital")?;
    println!("\n{declared} satisfies:");
    for purpose in taxonomy.satisfied_by(&declared) {
        println!("  {purpose}");
    }

    let policy_for = |token: &str| -> Result<UsagePolicy, Box<dyn std::error::Error>> {
        Ok(UsagePolicy::new(
            "r",
            1,
            vec![Obligation::purposes(vec![Purpose::new(token)?])],
        )?)
    };

    for granted in ["medical", "academic", "commercial"] {
        let decision = check_purpose(&policy_for(granted)?, &taxonomy, &declared)?;
        println!(
            "grant {{{granted}}} + declared {declared}: {}",
            match decision {
                Decision::Allow => "allow",
                Decision::Deny => "deny",
            }
        );
    }

    // A web analyst has no path into the medical domain.
    let analyst = Purpose::new("web-analytics")?;
    let decision = check_purpose(&policy_for("medical")?, &taxonomy, &analyst)?;
    println!("grant {{medical}} + declared {analyst}: {decision:?}");
    Ok(())
}
