//! Hand-built task bundles: a task, its matched agents and the verifier
//! configs it ships with.

use std::collections::BTreeMap;
use std::path::Path;

use crate::apps::{persist_app_state, AppAction, AppId, AppState};
use crate::harness::{Mutation, ScriptedAgent};
use crate::task::{CheckSpec, EnvInitRecipe, SeedArtifact, SeedKind, TaskInstance};
use crate::verifier::VerifierConfig;

#[derive(Clone, Debug)]
pub struct Bundle {
    pub name: &'static str,
    pub task: TaskInstance,
    /// `(file stem, agent)`; the first is the correct agent.
    pub agents: Vec<(&'static str, ScriptedAgent)>,
    /// `(file stem, config)`; the first is the shipped config.
    pub configs: Vec<(&'static str, VerifierConfig)>,
}

impl Bundle {
    pub fn agent(&self) -> &ScriptedAgent {
        &self.agents[0].1
    }

    /// Writes `task.json`, one JSON file per agent and per config.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("task.json"), self.task.to_json())?;
        for (stem, agent) in &self.agents {
            std::fs::write(dir.join(format!("{stem}.json")), agent.to_json())?;
        }
        for (stem, cfg) in &self.configs {
            std::fs::write(dir.join(format!("{stem}.json")), cfg.to_json())?;
        }
        Ok(())
    }
}

fn task(
    id: &str,
    app: AppId,
    difficulty: u8,
    instruction: &str,
    env_init: EnvInitRecipe,
    criteria: Vec<CheckSpec>,
) -> TaskInstance {
    let mut metadata = BTreeMap::new();
    metadata.insert("origin".into(), serde_json::Value::String("bundle".into()));
    TaskInstance {
        task_id: id.into(),
        app_id: app,
        instruction: instruction.into(),
        difficulty,
        env_init,
        criteria,
        metadata,
    }
}

fn numbered(specs: Vec<(&str, Vec<(&str, String)>)>) -> Vec<CheckSpec> {
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (endpoint, args))| {
            args.into_iter()
                .fold(CheckSpec::new(&format!("c{i}"), endpoint), |c, (k, v)| {
                    c.arg(k, v)
                })
        })
        .collect()
}

/// Persisted files of `state`, as seed artifacts of `kind`.
fn persisted(state: &AppState, kind: SeedKind) -> Vec<SeedArtifact> {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let written = persist_app_state(state, scratch.path()).expect("state persists");
    written
        .into_iter()
        .filter(|r| !r.ends_with('/'))
        .map(|rel| SeedArtifact {
            content: std::fs::read(scratch.path().join(&rel)).expect("persisted file"),
            rel_path: rel,
            kind,
        })
        .collect()
}

const IMAGES: [&str; 3] = ["img_001.png", "img_002.png", "img_003.png"];
const RATINGS: [i64; 3] = [1, 3, 5];
const TAG: &str = "batch_processed";
pub const MEDIA_TRAJECTORY_STEPS: usize = 53;

/// Import, tag, then a long rating session: the agent sweeps each image's
/// stars up and down before settling, and finishes with a confirmation pass.
fn media_script() -> Vec<AppAction> {
    let m = |verb| AppAction::new(AppId::Media, verb);
    let rate = |f: &str, r: i64| m("set_rating").with("filename", f).with("rating", r);
    let mut out: Vec<AppAction> = IMAGES
        .iter()
        .map(|f| m("import_image").with("filename", *f))
        .collect();
    out.push(m("create_tag").with("name", TAG));
    out.extend(
        IMAGES
            .iter()
            .map(|f| m("attach_tag").with("filename", *f).with("tag", TAG)),
    );
    for f in IMAGES {
        out.extend((1..=5).chain((0..=4).rev()).map(|r| rate(f, r)));
    }
    for (f, target) in IMAGES.iter().zip(RATINGS) {
        out.extend((1..=target).map(|r| rate(f, r)));
    }
    let mut k = 0;
    while out.len() < MEDIA_TRAJECTORY_STEPS {
        let i = k % IMAGES.len();
        out.push(if k % 2 == 0 {
            m("attach_tag").with("filename", IMAGES[i]).with("tag", TAG)
        } else {
            rate(IMAGES[i], RATINGS[i])
        });
        k += 1;
    }
    out
}

pub fn media_batch_rate_and_tag() -> Bundle {
    let mut specs: Vec<(&str, Vec<(&str, String)>)> = Vec::new();
    for f in IMAGES {
        specs.push(("check-image-exists", vec![("filename", f.into())]));
    }
    specs.push(("check-tag-exists", vec![("name", TAG.into())]));
    for f in IMAGES {
        specs.push((
            "check-image-has-tag",
            vec![("filename", f.into()), ("tag", TAG.into())],
        ));
    }
    for (f, r) in IMAGES.iter().zip(RATINGS) {
        specs.push((
            "check-image-rating",
            vec![("filename", (*f).into()), ("rating", r.to_string())],
        ));
    }
    let env_init = EnvInitRecipe {
        seed_artifacts: persisted(&AppState::empty(AppId::Media), SeedKind::StoreFile),
        init_actions: Vec::new(),
    };
    let t = task(
        "media_batch_rate_and_tag",
        AppId::Media,
        5,
        "Import img_001.png, img_002.png and img_003.png, create the tag batch_processed, attach it to all three images, and rate them one, three and five stars respectively.",
        env_init,
        numbered(specs),
    );
    let agent = ScriptedAgent::new("scripted:media_batch_rate_and_tag", media_script());
    let careless = ScriptedAgent::new("scripted:media_batch_rate_and_tag:careless", media_script())
        .with_faults(vec![Mutation::DropVerb {
            verb: "attach_tag".into(),
        }]);
    Bundle {
        name: "media_batch_rate_and_tag",
        task: t,
        agents: vec![("agent", agent), ("agent_careless", careless)],
        configs: vec![
            ("verifier", VerifierConfig::shipped(AppId::Media)),
            ("verifier_v1", VerifierConfig::media_v1()),
        ],
    }
}

const RECIPES: [(&str, &str); 3] = [
    ("Italian", "Carbonara"),
    ("Asian", "Ramen"),
    ("Desserts", "Tiramisu"),
];

pub fn vault_recipe_organizer() -> Bundle {
    let v = |verb| AppAction::new(AppId::Vault, verb);
    let mut script: Vec<AppAction> = RECIPES
        .iter()
        .map(|(f, _)| v("create_folder").with("path", *f))
        .collect();
    for (folder, dish) in RECIPES {
        let path = format!("{folder}/{dish}.md");
        let body = format!("# {dish}\n\n## Ingredients\n\n- see family notes\n\n#recipe\n");
        script.push(
            v("create_note")
                .with("path", path.as_str())
                .with("body", body),
        );
        script.push(
            v("set_frontmatter")
                .with("path", path)
                .with("key", "cuisine")
                .with("value", folder),
        );
    }
    let index: String = RECIPES
        .iter()
        .map(|(_, d)| format!("- [[{d}]]\n"))
        .collect();
    script.push(
        v("create_note")
            .with("path", "Index.md")
            .with("body", format!("# Recipes\n\n{index}")),
    );

    let mut specs: Vec<(&str, Vec<(&str, String)>)> = RECIPES
        .iter()
        .map(|(f, _)| ("check-folder-exists", vec![("path", (*f).into())]))
        .collect();
    specs.push(("check-note-exists", vec![("path", "Index.md".into())]));
    for (_, dish) in RECIPES {
        specs.push((
            "check-note-links-to",
            vec![("path", "Index.md".into()), ("target", dish.into())],
        ));
    }
    let t = task(
        "vault_recipe_organizer",
        AppId::Vault,
        5,
        "Create folders for Italian, Asian, and Desserts, add one recipe note to each with its cuisine in the frontmatter, and create Index.md linking to every recipe.",
        EnvInitRecipe::default(),
        numbered(specs),
    );
    Bundle {
        name: "vault_recipe_organizer",
        task: t,
        agents: vec![(
            "agent",
            ScriptedAgent::new("scripted:vault_recipe_organizer", script),
        )],
        configs: vec![("verifier", VerifierConfig::shipped(AppId::Vault))],
    }
}

const REPS: [&str; 5] = ["Alice", "Bruno", "Chen", "Dana", "Emeka"];

/// Twenty sales amounts cycling through the three commission tiers.
fn sales_amounts() -> Vec<i64> {
    (0..20)
        .map(|i| [12_500, 7_200, 3_100, 15_000, 5_000, 4_999, 10_000][i % 7] + (i as i64) * 10)
        .collect()
}

fn commission(x: i64) -> f64 {
    let x = x as f64;
    if x >= 10_000.0 {
        x * 0.1
    } else if x >= 5_000.0 {
        x * 0.07
    } else {
        x * 0.05
    }
}

pub fn workbook_commissions() -> Bundle {
    let w = |verb| AppAction::new(AppId::Workbook, verb);
    let cell = |sheet: &str, addr: &str| w("set_cell").with("sheet", sheet).with("addr", addr);
    let amounts = sales_amounts();
    let last = amounts.len() + 1;

    let mut seed = AppState::empty(AppId::Workbook);
    let mut seed_actions = vec![
        w("create_sheet").with("name", "Sales"),
        cell("Sales", "A1").with("value", "Rep"),
        cell("Sales", "B1").with("value", "Amount"),
    ];
    for (i, x) in amounts.iter().enumerate() {
        seed_actions
            .push(cell("Sales", &format!("A{}", i + 2)).with("value", REPS[i % REPS.len()]));
        seed_actions.push(cell("Sales", &format!("B{}", i + 2)).with("value", *x));
    }
    for a in &seed_actions {
        seed = crate::apps::apply_action(&seed, a).expect("seed action applies");
    }

    let mut script = vec![cell("Sales", "C1")
        .with("value", "Commission")
        .with("bold", true)];
    for r in 2..=last {
        let f = format!("=IF(B{r}>=10000,B{r}*0.1,IF(B{r}>=5000,B{r}*0.07,B{r}*0.05))");
        script.push(cell("Sales", &format!("C{r}")).with("formula", f));
    }
    script.push(w("create_sheet").with("name", "Commission Summary"));
    script.push(
        cell("Commission Summary", "A1")
            .with("value", "Total Commission")
            .with("bold", true),
    );
    script
        .push(cell("Commission Summary", "B1").with("formula", format!("=SUM(Sales!C2:C{last})")));

    let total: f64 = amounts.iter().map(|x| commission(*x)).sum();
    let s = |v: &str| v.to_string();
    let specs: Vec<(&str, Vec<(&str, String)>)> = vec![
        (
            "check-range-formulas",
            vec![("sheet", s("Sales")), ("range", format!("C2:C{last}"))],
        ),
        (
            "check-cell-formula",
            vec![
                ("sheet", s("Sales")),
                ("addr", s("C2")),
                ("contains", s("IF(")),
            ],
        ),
        (
            "check-cell-value",
            vec![
                ("sheet", s("Sales")),
                ("addr", s("C2")),
                ("value", commission(amounts[0]).to_string()),
            ],
        ),
        (
            "check-cell-value",
            vec![
                ("sheet", s("Sales")),
                ("addr", s("C3")),
                ("value", commission(amounts[1]).to_string()),
            ],
        ),
        (
            "check-cell-value",
            vec![
                ("sheet", s("Sales")),
                ("addr", s("C4")),
                ("value", commission(amounts[2]).to_string()),
            ],
        ),
        (
            "check-cell-bold",
            vec![("sheet", s("Sales")), ("addr", s("C1"))],
        ),
        (
            "check-sheet-exists",
            vec![("sheet", s("Commission Summary"))],
        ),
        (
            "check-cell-value",
            vec![
                ("sheet", s("Commission Summary")),
                ("addr", s("B1")),
                ("value", total.to_string()),
            ],
        ),
        (
            "check-cell-references",
            vec![
                ("sheet", s("Commission Summary")),
                ("addr", s("B1")),
                ("ref", format!("Sales!C2:C{last}")),
            ],
        ),
    ];
    let t = task(
        "workbook_commissions",
        AppId::Workbook,
        4,
        "In Sales, add a bold Commission header in C1 and a nested IF formula in every row paying 10% on amounts of at least 10000, 7% on at least 5000 and 5% otherwise. Then create a Commission Summary sheet with the total commission in B1.",
        EnvInitRecipe {
            seed_artifacts: persisted(&seed, SeedKind::WorkbookFile),
            init_actions: Vec::new(),
        },
        numbered(specs),
    );
    Bundle {
        name: "workbook_commissions",
        task: t,
        agents: vec![(
            "agent",
            ScriptedAgent::new("scripted:workbook_commissions", script),
        )],
        configs: vec![("verifier", VerifierConfig::shipped(AppId::Workbook))],
    }
}

pub fn shipped_bundles() -> Vec<Bundle> {
    vec![
        media_batch_rate_and_tag(),
        vault_recipe_organizer(),
        workbook_commissions(),
    ]
}

pub fn bundle(name: &str) -> Option<Bundle> {
    shipped_bundles().into_iter().find(|b| b.name == name)
}
