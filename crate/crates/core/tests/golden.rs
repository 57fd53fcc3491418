//! Byte-exact prompt and serialization goldens. Regenerate the prompt files
//! with `UPDATE_GOLDEN=1 cargo test --test golden`.

use std::path::PathBuf;

use tablesage::cli::render_messages;
use tablesage::dataset::{load_dataset, Dataset, Split, Table};
use tablesage::prompt::{build_messages, PromptConfig, GUIDING_SENTENCE};
use tablesage::serialize::{serialize_column, serialize_table, Format, SerializeOptions};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

fn restaurant_table(test: &Dataset) -> &Table {
    test.table("restaurants_t1")
        .expect("fixture has the pizza table")
}

pub fn zero_shot_prompt(test: &Dataset, format: Format, inst: bool, roles: bool) -> String {
    let table = restaurant_table(test);
    let opts = SerializeOptions::default();
    let target = match format {
        Format::Table => serialize_table(table, 5, &opts).unwrap(),
        _ => serialize_column(&table.columns[0], format, 5, &opts).unwrap(),
    };
    let cfg = PromptConfig::new(format, test.vocabulary.labels().to_vec())
        .instructions(inst)
        .roles(roles);
    render_messages(&build_messages(&cfg, &[], &target).unwrap())
}

const VARIANTS: [(bool, bool); 3] = [(false, false), (true, false), (true, true)];

#[test]
fn pizza_table_serialization() {
    let test = load_dataset(&fixture(), Split::Test).unwrap();
    let s = serialize_table(restaurant_table(&test), 5, &SerializeOptions::default()).unwrap();
    let expected = "Column 1 || Column 2 || Column 3 || Column 4 || \n\
                    Friends Pizza || 2525 || Cash Visa MasterCard || 7:30 AM ||\n";
    assert!(s.payload.starts_with(expected), "{:?}", s.payload);
    assert_eq!(s.payload.lines().count(), 6);
    assert!(s
        .payload
        .ends_with("Bistro Lumiere || $$$$ || All major credit cards || 6:00 PM ||\n"));
}

#[test]
fn zero_shot_prompt_goldens() {
    let test = load_dataset(&fixture(), Split::Test).unwrap();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    if update {
        std::fs::create_dir_all(golden_dir()).unwrap();
    }
    for format in Format::ALL {
        for (inst, roles) in VARIANTS {
            let cfg = PromptConfig::new(format, vec![])
                .instructions(inst)
                .roles(roles);
            let path = golden_dir().join(format!("{}.txt", cfg.variant_name()));
            let got = zero_shot_prompt(&test, format, inst, roles);
            if update {
                std::fs::write(&path, &got).unwrap();
                continue;
            }
            let want = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display()));
            assert_eq!(got, want, "{} drifted", path.display());
        }
    }
}

#[test]
fn goldens_carry_the_verbatim_sentences() {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        return;
    }
    let read = |name: &str| std::fs::read_to_string(golden_dir().join(name)).unwrap();
    for f in std::fs::read_dir(golden_dir()).unwrap() {
        let text = std::fs::read_to_string(f.unwrap().path()).unwrap();
        assert!(text.contains(GUIDING_SENTENCE));
    }
    assert!(read("column.txt").contains(
        "Classify the column given to you into one of these types which are seperated by comma:"
    ));
    assert!(read("text.txt").contains(
        "Classify the text given to you into one of these classes that are separated with comma:"
    ));
    assert!(read("table.txt")
        .contains("Classify the columns of a given table with one of the following classes:"));
    assert!(read("table+inst.txt").contains("2. Generate a table out of the input given to you."));
    assert!(read("table+inst+roles.txt").starts_with("[system]\n"));
    assert!(read("table+inst.txt").starts_with("[user]\n"));
    assert_eq!(std::fs::read_dir(golden_dir()).unwrap().count(), 9);
}
