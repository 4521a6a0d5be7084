use spectrum_game::sim::charts::render_charts;
use spectrum_game::sim::dynamics::MoveRule;
use spectrum_game::sim::experiments::{
    experiment_channels, experiment_dynamics, experiment_optin, experiment_users, ChannelsRow, DynamicsRow, OptinRow,
    CHANNELS_HEADER, DYNAMICS_HEADER, OPTIN_HEADER, USERS_HEADER,
};
use spectrum_game::sim::records::{read_csv, read_json, write_records, Format, RunRecord, Table};
use spectrum_game::sim::scenario::ScenarioSpec;

fn first_line(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn record(experiment: &str, table: Table) -> RunRecord {
    RunRecord {
        experiment: experiment.into(),
        scenario: ScenarioSpec::default(),
        noise: true,
        table,
    }
}

#[test]
fn every_table_writes_its_schema_and_reads_back() {
    let base = ScenarioSpec { n: 30, k: 4, m: 3, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();

    let users = record("users", Table::Users(experiment_users(&base, &[500, 600], &[10, 20]).unwrap()));
    let f = write_records(&users, dir.path(), Format::Csv).unwrap();
    assert_eq!(first_line(&f[0]), USERS_HEADER);

    let ch_rows = experiment_channels(&base, &[5, 6, 7], &[10], 1000).unwrap();
    let channels = record("channels", Table::Channels(ch_rows.clone()));
    let f = write_records(&channels, dir.path(), Format::Csv).unwrap();
    assert_eq!(first_line(&f[0]), CHANNELS_HEADER);
    assert_eq!(read_csv::<ChannelsRow>(&f[0]).unwrap(), ch_rows);

    let opt: Vec<OptinRow> = experiment_optin(&base, &[0.2, 0.8], 3, true).unwrap().iter().map(OptinRow::from).collect();
    let optin = record("optin", Table::Optin(opt.clone()));
    let f = write_records(&optin, dir.path(), Format::Csv).unwrap();
    assert_eq!(first_line(&f[0]), OPTIN_HEADER);
    assert_eq!(read_csv::<OptinRow>(&f[0]).unwrap().len(), 2);

    let dy = experiment_dynamics(&base, 4, MoveRule::default()).unwrap();
    let dynamics = record("dynamics", Table::Dynamics(dy.clone()));
    let f = write_records(&dynamics, dir.path(), Format::Csv).unwrap();
    assert_eq!(first_line(&f[0]), DYNAMICS_HEADER);
    assert_eq!(read_csv::<DynamicsRow>(&f[0]).unwrap(), dy);

    for rec in [&users, &channels, &optin, &dynamics] {
        let j = write_records(rec, dir.path(), Format::Json).unwrap();
        assert_eq!(&read_json(&j[0]).unwrap(), rec);
        let svg = render_charts(rec, dir.path()).unwrap();
        assert!(std::fs::read_to_string(&svg[0]).unwrap().starts_with("<svg"));
    }
}

#[test]
fn dynamics_conserves_users() {
    let base = ScenarioSpec { n: 60, k: 6, m: 3, ..Default::default() };
    let rows = experiment_dynamics(&base, 5, MoveRule { move_prob: 0.5 }).unwrap();
    let steps = rows.iter().map(|r| r.step).max().unwrap();
    for s in 0..=steps {
        let total: usize = rows.iter().filter(|r| r.step == s).map(|r| r.users).sum();
        assert_eq!(total, base.n);
    }
    assert!(rows.iter().all(|r| r.channels >= 3 && r.channels <= 6));
}
