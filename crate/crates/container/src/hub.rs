//! Stream subscriptions pushed to sinks. Each feed keeps every event, so a
//! sink that connects late still sees the stream from its first element.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ozy_core::term::Term;
use tokio::sync::watch;

#[derive(Debug, Clone, PartialEq)]
pub enum HubEvent {
    Item(Term),
    End,
}

#[derive(Debug)]
pub struct Feed {
    pub tenant: String,
    pub process: String,
    events: Mutex<Vec<HubEvent>>,
    len: watch::Sender<usize>,
}

impl Feed {
    pub fn events_from(&self, from: usize) -> Vec<HubEvent> {
        let ev = self.events.lock().unwrap();
        ev.get(from..).map(<[HubEvent]>::to_vec).unwrap_or_default()
    }

    pub fn ended(&self) -> bool {
        self.events.lock().unwrap().last() == Some(&HubEvent::End)
    }

    /// Notified whenever events are appended.
    pub fn watch(&self) -> watch::Receiver<usize> {
        self.len.subscribe()
    }
}

#[derive(Debug, Default)]
pub struct StreamHub {
    feeds: Mutex<HashMap<(String, String), Arc<Feed>>>,
}

impl StreamHub {
    pub fn open(&self, tenant: &str, process: &str, sid: &str) -> Arc<Feed> {
        let mut feeds = self.feeds.lock().unwrap();
        feeds
            .entry((tenant.to_string(), sid.to_string()))
            .or_insert_with(|| {
                Arc::new(Feed { tenant: tenant.into(), process: process.into(), events: Mutex::new(Vec::new()), len: watch::channel(0).0 })
            })
            .clone()
    }

    pub fn get(&self, tenant: &str, sid: &str) -> Option<Arc<Feed>> {
        self.feeds.lock().unwrap().get(&(tenant.to_string(), sid.to_string())).cloned()
    }

    /// Appends events; nothing is accepted after `End`.
    pub fn push(&self, tenant: &str, process: &str, sid: &str, events: Vec<HubEvent>) {
        if events.is_empty() {
            return;
        }
        let feed = self.open(tenant, process, sid);
        let n = {
            let mut ev = feed.events.lock().unwrap();
            for e in events {
                if ev.last() == Some(&HubEvent::End) {
                    break;
                }
                ev.push(e);
            }
            ev.len()
        };
        feed.len.send_replace(n);
    }
}
