use demo_server::protocol::{ClientMessage, ServerMessage};
use demo_server::{replay_archive, Phase, Session};
use demolab::archive::DemoArchive;
use demolab::env::{EnvId, EnvSpec};
use proptest::prelude::*;

const HZ: f64 = 15.0;

fn play(session: &mut Session, steps: usize) -> usize {
    let mut frames = 0;
    for _ in 0..steps {
        if session.tick().unwrap().frame.is_some() {
            frames += 1;
        }
    }
    frames
}

fn saved(out: &demo_server::session::Outbox) -> Option<(usize, usize, usize)> {
    out.status.iter().find_map(|m| match m {
        ServerMessage::Saved { states, episodes, total_states, .. } => Some((*states, *episodes, *total_states)),
        _ => None,
    })
}

#[test]
fn idle_player_records_default_actions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demo.bin");
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPacman), 4, &path);
    // an idle pacman survives this long on seed 4
    assert_eq!(play(&mut s, 100), 100);
    assert_eq!(s.recording_len(), 100);
    let out = s.handle(ClientMessage::Stop, HZ);
    assert!(matches!(out.status[..], [ServerMessage::Paused { terminal: false, steps: 100, .. }]));
    assert_eq!(play(&mut s, 5), 0, "a paused session does not step");
    assert_eq!(saved(&s.handle(ClientMessage::Save, HZ)), Some((100, 1, 100)));

    let archive = DemoArchive::load(&path).unwrap();
    assert_eq!(archive.len(), 1);
    assert_eq!(archive.episodes[0].len(), 100);
    assert!(archive.episodes[0].actions.iter().all(|&a| a == 0));
    assert_eq!(s.recording_len(), 0);
    assert_eq!(s.phase(), Phase::Playing);
}

#[test]
fn latest_action_wins_and_bad_actions_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPong), 1, dir.path().join("a.bin"));
    play(&mut s, 2);
    s.handle(ClientMessage::Action { action: 1 }, HZ);
    s.handle(ClientMessage::Action { action: 2 }, HZ);
    play(&mut s, 3);
    let out = s.handle(ClientMessage::Action { action: 9 }, HZ);
    assert!(matches!(out.status[..], [ServerMessage::Warning { .. }]));
    assert_eq!(s.held_action(), 2);
    play(&mut s, 1);
    s.handle(ClientMessage::Stop, HZ);
    s.handle(ClientMessage::Save, HZ);
    let archive = DemoArchive::load(s.archive_path()).unwrap();
    assert_eq!(archive.episodes[0].actions, vec![0, 0, 2, 2, 2, 2]);
}

#[test]
fn eight_saved_episodes_and_a_discard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eight.bin");
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPacman), 100, &path);
    let mut total = 0;
    for i in 0..8 {
        // some of these end early when a ghost catches the idle player
        let n = play(&mut s, 20 + 7 * i);
        total += n;
        if s.phase() == Phase::Playing {
            s.handle(ClientMessage::Stop, HZ);
        }
        assert_eq!(saved(&s.handle(ClientMessage::Save, HZ)), Some((n, i + 1, total)));
    }
    let before = std::fs::read(&path).unwrap();
    play(&mut s, 10);
    s.handle(ClientMessage::Stop, HZ);
    let out = s.handle(ClientMessage::Discard, HZ);
    assert!(matches!(out.status[..], [ServerMessage::Discarded { states: 10 }]));
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let archive = DemoArchive::load(&path).unwrap();
    assert_eq!((archive.len(), archive.total_states()), (8, total));
    for i in 0..8 {
        let replay = replay_archive(&archive, i).unwrap();
        assert!(replay.matches(&archive, i), "episode {i}");
        assert_eq!(replay.score, archive.manifest.episodes[i].score);
        assert_eq!(archive.episodes[i].seed, 100 + i as u64);
    }
    assert!(replay_archive(&archive, 8).is_err());
}

#[test]
fn game_over_pauses_until_saved() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("over.bin");
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPong), 2, &path);
    let mut ended = None;
    for _ in 0..2000 {
        let out = s.tick().unwrap();
        if let Some(ServerMessage::Paused { terminal, steps, .. }) = out.status.first() {
            assert!(out.frame.as_ref().unwrap().terminal);
            ended = Some((*terminal, *steps));
            break;
        }
    }
    let (terminal, steps) = ended.expect("pong ends within its step cap");
    assert!(matches!(s.phase(), Phase::Ended { .. }));
    assert!(s.tick().unwrap().frame.is_none());
    s.handle(ClientMessage::Save, HZ);
    let archive = DemoArchive::load(&path).unwrap();
    assert_eq!(archive.episodes[0].terminal, terminal);
    assert_eq!(archive.episodes[0].len(), steps);
    assert!(replay_archive(&archive, 0).unwrap().matches(&archive, 0));
}

#[test]
fn failed_write_keeps_the_recording() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("later");
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPong), 3, sub.join("demo.bin"));
    play(&mut s, 12);
    assert!(matches!(s.handle(ClientMessage::Save, HZ).status[..], [ServerMessage::Warning { .. }]));
    s.handle(ClientMessage::Stop, HZ);
    let out = s.handle(ClientMessage::Save, HZ);
    assert!(matches!(out.status[..], [ServerMessage::Warning { .. }]));
    assert_eq!(s.recording_len(), 12);
    std::fs::create_dir(&sub).unwrap();
    assert_eq!(saved(&s.handle(ClientMessage::Save, HZ)), Some((12, 1, 12)));
}

#[test]
fn replay_rejects_other_dynamics_versions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bin");
    let mut s = Session::new(EnvSpec::new(EnvId::MiniPacman), 3, &path);
    play(&mut s, 10);
    s.handle(ClientMessage::Stop, HZ);
    s.handle(ClientMessage::Save, HZ);
    let mut archive = DemoArchive::load(&path).unwrap();
    archive.manifest.env_version += 1;
    assert!(replay_archive(&archive, 0).is_err());
}

#[derive(Clone, Debug)]
enum Op {
    Tick,
    Msg(ClientMessage),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => Just(Op::Tick),
        1 => (0usize..5).prop_map(|a| Op::Msg(ClientMessage::Action { action: a })),
        1 => Just(Op::Msg(ClientMessage::Stop)),
        1 => Just(Op::Msg(ClientMessage::Discard)),
        1 => Just(Op::Msg(ClientMessage::Reset)),
    ]
}

proptest! {
    #[test]
    fn recording_tracks_steps_since_reset(ops in prop::collection::vec(op(), 0..120)) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(EnvSpec::new(EnvId::MiniPong), 5, dir.path().join("p.bin"));
        let mut since_reset = 0usize;
        for op in ops {
            match op {
                Op::Tick => {
                    if s.tick().unwrap().frame.is_some() {
                        since_reset += 1;
                    }
                }
                Op::Msg(m) => {
                    let before = s.seed();
                    s.handle(m, HZ);
                    if s.seed() != before {
                        since_reset = 0;
                    }
                }
            }
            prop_assert_eq!(s.recording_len(), since_reset);
        }
    }
}
